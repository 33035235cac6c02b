from .jpeg_meta import QuantTable, QFeature, extract_dqt, parse_markers, q_feature

__version__ = "0.1.0"
