"""Lung-CT infection segmentation toolkit: attention-gated multi-scale
encoder-decoder models, leave-one-patient-out ensembles, patch pipeline,
metrics and severity grading."""

try:
    from ._amcseg import *  # noqa: F401,F403
    from ._amcseg import __version__  # noqa: F401
except ImportError:  # running against an in-tree build
    from _amcseg import *  # noqa: F401,F403
    from _amcseg import __version__  # noqa: F401
