import sys

from sextortion_forensics.cli import main

sys.exit(main())
