"""Convex relaxation of the mailing Gilbert problem on regular grids."""

from .grid import (GridSpec, MailingPlan, PairTable, SimplexWeights, TerminalSet, build_grid,
                   pair_table, single_pair, uniform_weights)
from .trees import (CostBudget, EmbeddedTree, TreeError, compute_edge_flows, gilbert_cost,
                    min_transport_cost, optimal_budget, transport_cost)
from .wasserstein import ConvergenceWarning, PExponent, inner_max, primal_objective
from .entropic import AnnealSchedule, PotentialSet, SolveDiagnostics, solve
from .extraction import extract, prune_and_treeify, support_graph

__version__ = "0.1.0"
