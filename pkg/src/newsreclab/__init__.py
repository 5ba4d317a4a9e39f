"""Session-based news recommendation lab.

A small laboratory for next-article recommendation: a hybrid recurrent
model with a tunable accuracy/novelty objective, six classic session
baselines, and a streaming hour-by-hour evaluation engine with accuracy,
coverage, novelty, and diversity metrics.
"""

__version__ = "0.1.0"
