import sys

from qcap.main import main

if __name__ == "__main__":
    sys.exit(main())
