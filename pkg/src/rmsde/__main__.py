import sys

from rmsde.cli import main

sys.exit(main())
