"""Certified asymptotic key rates for decoy-state QKD.

Subpackages and modules:

``fock``
    Bosonic-mode primitives: Poisson photon statistics, photon-number
    sectors of multimode Fock space, click operators induced by a linear
    mode transformation, coherent-state click probabilities.
``squasher``
    Flag-state-squasher subspace estimation: partition constants, lossy
    detector decomposition, dark-count variants, detector characterization.
``kernel``
    Self-contained dense convex solvers (LP, SDP, Frank-Wolfe relative
    entropy minimization) with certified dual bounds.
``protocols``
    BB84 and six-state protocol definitions (POVMs, Kraus operators,
    key-map pinching, signal states).
``decoy``
    Yield estimation via linear programs and Choi-constrained SDPs,
    photon-number conditioning for differing intensities.
``channel``
    Closed-form honest-channel statistics generation.
``keyrate``
    Key-rate assembly and distance scans.
``cli``
    Batch command-line front end.
"""

__version__ = "0.1.0"
