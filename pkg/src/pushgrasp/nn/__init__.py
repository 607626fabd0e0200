from . import checkpoint, gradcheck, layers, ops, optim

__all__ = ["checkpoint", "gradcheck", "layers", "ops", "optim"]
