# noqa: INP001, CPY001
"""mikecoco Sphinx configuration."""

# Configuration file for the Sphinx documentation builder.
# https://www.sphinx-doc.org/en/master/usage/configuration.html

from datetime import datetime

# -- Project information -----------------------------------------------------
project = 'mikecoco'
copyright = f'{datetime.now().year}, The mikecoco developers'  # noqa: A001, DTZ005
author = 'The mikecoco developers'

# -- General configuration ---------------------------------------------------

extensions = [
    'numpydoc',
    'sphinx.ext.autodoc',
    'sphinx.ext.autosummary',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
]

exclude_patterns = ['_build', '**/tests/*']

autosummary_generate = True

intersphinx_mapping = {
    'python': ('https://docs.python.org/3/', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
    'torch': ('https://pytorch.org/docs/stable/', None),
}

numpydoc_show_class_members = False

# -- Options for HTML output -------------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_theme_options = {
    'collapse_navigation': False,
    'navigation_depth': 2,
}
html_show_sphinx = False
html_show_sourcelink = False
numfig = True
