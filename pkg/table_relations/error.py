# Copyright (C) DATADVANCE, 2010-2023
#
# Permission is hereby granted, free of charge, to any person obtaining
# a copy of this software and associated documentation files (the
# "Software"), to deal in the Software without restriction, including
# without limitation the rights to use, copy, modify, merge, publish,
# distribute, sublicense, and/or sell copies of the Software, and to
# permit persons to whom the Software is furnished to do so, subject to
# the following conditions:
#
# The above copyright notice and this permission notice shall be
# included in all copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND,
# EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF
# MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT.
# IN NO EVENT SHALL THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY
# CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION OF CONTRACT,
# TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE
# SOFTWARE OR THE USE OR OTHER DEALINGS IN THE SOFTWARE.

"""Root of the exception hierarchy.

Every module defines its own exception classes next to the code which
raises them. All of them derive from `TableRelationsError`, so callers
(the command-line interface in particular) can tell library failures
from programming errors.
"""


class TableRelationsError(Exception):
    """Base class for all errors raised by the library."""

    # Exit code the command-line interface returns for this error.
    exit_code: int = 1

    def __init__(self, message=None):
        """Exception constructor."""
        super().__init__(message)
        self.message = message

    def __str__(self):
        """Nice string representation."""
        return f"{self.message or type(self).__name__}!"


class ConfigError(TableRelationsError):
    """Invalid configuration value, unknown variant, or bad config file."""

    exit_code = 2
