import pathlib
import sys

# Import the package straight from the source tree; the compiled extension is
# located through SIMIC_MODULE_DIR (set by ctest to the CMake build directory).
_PYTHON_DIR = pathlib.Path(__file__).resolve().parents[2] / "python"
if str(_PYTHON_DIR) not in sys.path:
    sys.path.insert(0, str(_PYTHON_DIR))
