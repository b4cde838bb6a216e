import sys

from lfcodec.cli import main

sys.exit(main())
