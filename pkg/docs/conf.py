# -*- coding: utf-8 -*-
#
# microvasc documentation build configuration file.

import os
import sys

sys.path.insert(0, os.path.abspath('..'))

import microvasc

extensions = ['sphinx.ext.autodoc']

templates_path = ['_templates']

source_suffix = '.rst'

master_doc = 'index'

project = u'microvasc'
copyright = u'2026, microvasc developers'

version = microvasc.__version__
release = microvasc.__version__

exclude_trees = ['_build']

pygments_style = 'sphinx'

html_theme = 'default'

htmlhelp_basename = 'microvascdoc'

latex_documents = [
  ('index', 'microvasc.tex', u'microvasc Documentation',
   u'microvasc developers', 'manual'),
]
