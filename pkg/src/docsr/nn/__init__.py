from docsr.nn.autodiff import Var, as_var, constant
from docsr.nn import ops, init, optim

__all__ = ["Var", "as_var", "constant", "ops", "init", "optim"]
