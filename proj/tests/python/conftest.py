import os
import sys

# the built extension lives in the cmake build tree; ctest sets UTR_PY_DIR
_ext_dir = os.environ.get("UTR_PY_DIR")
if _ext_dir and _ext_dir not in sys.path:
    sys.path.insert(0, _ext_dir)
