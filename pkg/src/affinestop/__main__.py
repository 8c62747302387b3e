import sys

from affinestop.cli import main

sys.exit(main())
