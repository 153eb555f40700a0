"""Hot kernels: the compiled extension when it was built, pure Python otherwise.

Set ``CELLFREE_HO_PURE=1`` to force the fallback. ``BACKEND`` names the
implementation in use; both modules expose the same functions.
"""

import os

from . import _kernels_py

if os.environ.get("CELLFREE_HO_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

j0 = _impl.j0
j0_array = _impl.j0_array
topk_mask = _impl.topk_mask
reward_rate = _impl.reward_rate
dense_forward = _impl.dense_forward

fallback = _kernels_py
