"""
Variational Inverse-Wishart approximations for Kronecker-structured covariances.
"""
__version__ = "0.1.0"
