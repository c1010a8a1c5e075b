import sys

from nnd.cli import main

sys.exit(main())
