import sys

from biq.cli import main

sys.exit(main())
