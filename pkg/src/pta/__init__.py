"""Proxy-targeted attack toolkit for cross-modal embedding alignment.

Library layout:

* :mod:`pta.numerics`    — vector primitives and statistics
* :mod:`pta.rng`         — deterministic seeded random streams
* :mod:`pta.synthworld`  — synthetic two-modality world and encoder
* :mod:`pta.attack`      — attack objectives, PGD and square-search optimizers
* :mod:`pta.detect`      — embedding-space anomaly scorers and outlier filter
* :mod:`pta.evalharness` — classification / retrieval / poisoning metrics
* :mod:`pta.theory`      — closed-form trade-off and polytope-bound checkers
* :mod:`pta.experiment`  — deterministic experiment orchestration
* :mod:`pta.report`      — CSV/JSON emission and figure rendering
* :mod:`pta.cli`         — command-line entry point
"""

__version__ = "0.1.0"
