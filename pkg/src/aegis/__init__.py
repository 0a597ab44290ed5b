"""Context-aware security monitoring for smart homes.

The package is organized around a small event pipeline: device events are
binarized into context arrays, a sparse first-order Markov chain is trained
over the observed context states, and run-time transitions that fall outside
the learned behavior raise alerts that humans can confirm or dismiss.
"""

__version__ = "0.1.0"
