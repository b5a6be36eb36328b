"""zok: a desk-scale semantic segmentation toolkit.

Modules
-------
core_io   raster/tensor types, CIELAB conversion, bit-exact file formats
slic      SLIC superpixel oversegmentation
zoomout   region geometry and multi-level feature construction
learner   softmax MLP classifiers with class-rebalanced log-loss
weaksup   image-level localization scoring and diverse point sampling
crf       fully-connected pairwise CRF energies and mean-field inference
metrics   segmentation and depth evaluation
synth     deterministic synthetic datasets
cli       the `zok` command-line tool
"""

__version__ = "0.1.0"
