"""Allow ``python -m kronvb``."""
import sys

from kronvb.main import main

sys.exit(main())
