"""Min-cost dynamic power flow with quadratic line losses, solved as a convex QCQP."""

from .grid import Arc, Edge, GridNode, Source, Spgg, Upgg, trivial_self_supply_check, validate
from .pwfun import PiecewiseConstantFn, TimeGrid, common_refinement, evaluate, integrate, over_approximate
from .qcqp import FlowPoint, QcqpInstance, constants, harden, slack_program
from .reduce import build_qcqp, simplify_constant, time_expand

__version__ = "0.1.0"
