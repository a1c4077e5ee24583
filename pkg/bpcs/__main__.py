import sys

from bpcs.main import main

sys.exit(main())
