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

"""MessagePack serializer supporting NumPy arrays."""

import logging

import msgpack
import numpy as np

# Module logger.
LOG = logging.getLogger(__name__)


class Serializer:
    """Serialize/deserialize Python collections with NumPy arrays.

    Arrays are stored as raw bytes with their dtype string (byte order
    included) and shape, so they come back bit-exact. For details see:
        MessagePack:
            https://github.com/msgpack/msgpack-python
    """

    @staticmethod
    def serialize(data) -> bytes:
        """Serialize the `data`."""

        def encode_extra_types(obj):
            """MessagePack hook to serialize extra types.

            Supported types:
            - `numpy.ndarray` (any fixed-size dtype)
            - NumPy scalars (as Python numbers)

            """
            if isinstance(obj, np.ndarray):
                return {
                    "__ndarray__": True,
                    "dtype": obj.dtype.str,
                    "shape": list(obj.shape),
                    "data": np.ascontiguousarray(obj).tobytes(),
                }
            if isinstance(obj, np.generic):
                return obj.item()
            return obj

        return msgpack.packb(data, default=encode_extra_types, use_bin_type=True)

    @staticmethod
    def deserialize(data: bytes):
        """Deserialize the `data`."""

        def decode_extra_types(obj):
            """MessagePack hook to deserialize extra types."""
            if "__ndarray__" in obj:
                obj = (
                    np.frombuffer(obj["data"], dtype=np.dtype(obj["dtype"]))
                    .reshape(obj["shape"])
                    .copy()
                )
            return obj

        return msgpack.unpackb(data, object_hook=decode_extra_types, raw=False)
