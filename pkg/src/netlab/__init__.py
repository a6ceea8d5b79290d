"""Simulation and verification toolkit for one-dimensional branching-coalescing random walks.

The package is split by concern:

* :mod:`netlab.kernel` holds increment laws and everything derived from them.
* :mod:`netlab.netsim` assigns arrows to lattice sites (webs, nets, Bernoulli nets).
* :mod:`netlab.pointset` evolves forward and dual point sets.
* :mod:`netlab.pathops` covers sticky pairs and the hopping closure.
* :mod:`netlab.rbp` finds relevant branching points and their graph.
* :mod:`netlab.stats` provides scaling, continuum oracles and estimators.
* :mod:`netlab.cli` runs reproducible experiments.
"""

__version__ = "0.1.0"
