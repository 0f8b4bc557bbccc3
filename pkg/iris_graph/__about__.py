__title__ = 'iris-graph'
__package_name__ = 'iris_graph'
__version__ = '0.1.0'
__description__ = "Iris-Graph, long-range iris verification with graph siamese neural networks."
__email__ = ""
__author__ = 'Iris-Graph contributors'
__github__ = ''
__pypi__ = ''
__license__ = 'GPL-3.0'
__copyright__ = 'Copyright (C) 2026  Iris-Graph contributors'
