"""Non-asymptotic mean-field approximations for games with few players.

Subpackages and modules:

* :mod:`nonasym_mf.core` -- indistinguishable payoffs, second-order error
  bounds, small-game verifiers.
* :mod:`nonasym_mf.queueing` -- Erlang-C, heterogeneous M/M/n approximation,
  discrete-event simulation.
* :mod:`nonasym_mf.auction` -- static first-price auctions (closed forms,
  shooting, collocation, revenue).
* :mod:`nonasym_mf.dyn_auction` -- repeated first-price auctions with budgets.
* :mod:`nonasym_mf.cli` -- batch command-line entry point.
"""

__version__ = "0.1.0"
