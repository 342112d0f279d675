import sys

from seqframe.trainer import main

sys.exit(main())
