"""Multi-stage influence functions.

Two-stage (pretrain -> finetune) training with exact Hessian-vector
products, conjugate-gradient inverse-Hessian solves, and influence scores
that attribute a finetuned model's test loss back to individual
pretraining examples.
"""

try:
    from ._msinfluence import *  # noqa: F401,F403  (installed wheel layout)
    from ._msinfluence import __version__  # noqa: F401
except ImportError:  # in-tree build: extension sits on PYTHONPATH directly
    from _msinfluence import *  # noqa: F401,F403
    from _msinfluence import __version__  # noqa: F401
