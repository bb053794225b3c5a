"""relex: a desk-scale relation classification toolkit.

Parses annotated corpora, synthesizes balanced relation/non-relation
instances, encodes them with entity markers and context windows, trains a
compact transformer classifier with class-weighted loss and stratified
batching, and evaluates both the supervised model and zero/few-shot
prompt-based classification with the same metric suite.
"""

__version__ = "0.1.0"
