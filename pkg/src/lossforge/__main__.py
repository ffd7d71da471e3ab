import sys

from lossforge.cli import main

sys.exit(main())
