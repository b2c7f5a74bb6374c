import os
import sys

# Under ctest, test the extension just built in the build tree even when an
# editable install would otherwise redirect the import.
_build = os.environ.get("GEOECON_BUILD_PYTHONPATH")
if _build:
    sys.meta_path[:] = [f for f in sys.meta_path if type(f).__name__ != "ScikitBuildRedirectingFinder"]
    sys.path.insert(0, _build)
