"""Analysis toolkit for 250 Hz headband sleep recordings.

Subpackages follow the pipeline order: ingest raw nights, extract
per-epoch features, train and evaluate stage classifiers, then replay
nights through the online stager. synth generates the self-contained
test corpora everything else is exercised against.
"""

__version__ = "0.1.0"
