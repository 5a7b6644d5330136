#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""mikecoco library."""

name = 'mikecoco'

__version__ = '0.3.0'

__copyright__ = 'Copyright (c) 2026 The mikecoco developers'

__license__ = 'BSD 3-Clause License'
