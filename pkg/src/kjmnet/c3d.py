"""C3D motion-capture file reader and writer.

The C3D container is a sequence of 512-byte blocks:

    block 1        header (point/analog counts, frame range, scale, rates,
                   pointer to the parameter section and to the data section)
    blocks 2..k    parameter section (named groups of typed parameters)
    blocks k+1..   frame data (per frame: point samples, then the analog
                   subframes recorded during that frame)

Only Intel (little-endian) files are supported; the parameter prologue's
fourth byte declares the processor and anything other than 84 is refused.
Point storage is float when the point scale is negative, scaled 16-bit
integer when it is positive. A negative residual marks an invalid point
sample. Analog samples are stored raw; calibration to engineering units
happens in `extract_force_plate` using the ANALOG group parameters:

    calibrated = (raw - offset) * channel_scale * gen_scale

The writer always emits Intel float storage, so integer-storage sources
round-trip at value level, not encoding level. Group descriptions are not
retained (written back empty); parameter descriptions are.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChannelCountMismatch,
    GappedTrajectory,
    MagicMismatch,
    MalformedParameter,
    MissingMarker,
    MissingPlate,
    TruncatedFile,
    UnrepresentableValue,
)

__all__ = [
    "BLOCK",
    "CANONICAL_MARKERS",
    "C3dHeader",
    "ParameterRecord",
    "C3dFile",
    "MarkerTrajectorySet",
    "ForcePlateRecord",
    "parse_c3d",
    "write_c3d",
    "extract_markers",
    "extract_force_plate",
    "make_c3d",
    "c3d_equal",
]

BLOCK = 512
_INTEL = 84

# Marker set used throughout the pipeline, in the order that defines image
# column layout: neck, sacrum, then left/right toe, heel, ankle markers.
CANONICAL_MARKERS = ("C7", "SACR", "LMT1", "RMT1", "LCAL", "RCAL", "LLMAL", "RLMAL")

_TYPE_WIDTH = {-1: 1, 1: 1, 2: 2, 4: 4}
_TYPE_NAME = {-1: "char", 1: "int8", 2: "int16", 4: "float32"}
_NAME_TYPE = {v: k for k, v in _TYPE_NAME.items()}
_TYPE_DTYPE = {1: "<i1", 2: "<i2", 4: "<f4"}


@dataclass
class C3dHeader:
    """Decoded words of the 512-byte header block."""

    point_count: int
    analog_channel_count: int
    analog_samples_per_frame: int
    first_frame: int
    last_frame: int
    max_interpolation_gap: int
    point_scale: float
    data_start_block: int
    point_rate: float

    @property
    def frame_count(self):
        return self.last_frame - self.first_frame + 1

    @property
    def analog_rate(self):
        return self.point_rate * self.analog_samples_per_frame


@dataclass
class ParameterRecord:
    """One parameter, with its group resolved to a name.

    The payload is kept as raw little-endian bytes; `values()` and
    `strings()` decode on demand. Dimension order follows the file
    convention (first index varies fastest).
    """

    group_name: str
    name: str
    scalar_type: str  # char | int8 | int16 | float32
    dimensions: tuple
    payload: bytes
    description: str = ""

    def values(self):
        """Numeric payload as a flat float64 array (first index fastest)."""
        if self.scalar_type == "char":
            raise ValueError(f"{self.group_name}:{self.name} is char data")
        dtype = _TYPE_DTYPE[_NAME_TYPE[self.scalar_type]]
        return np.frombuffer(self.payload, dtype=dtype).astype(float)

    def scalar(self):
        vals = self.values()
        if vals.size != 1:
            raise ValueError(f"{self.group_name}:{self.name} is not scalar")
        return float(vals[0])

    def strings(self):
        """Char payload as a list of stripped strings.

        One-dimensional char data is a single string; two-dimensional data
        is a list of fixed-width strings (width = first dimension).
        """
        if self.scalar_type != "char":
            raise ValueError(f"{self.group_name}:{self.name} is not char data")
        if len(self.dimensions) <= 1:
            return [self.payload.decode("ascii", "replace").strip()]
        width = self.dimensions[0]
        count = int(np.prod(self.dimensions[1:]))
        return [
            self.payload[i * width:(i + 1) * width].decode("ascii", "replace").strip()
            for i in range(count)
        ]


@dataclass
class C3dFile:
    """Parsed file: header, parameters, and raw frame data.

    point_frames has shape (frames, points, 4): x, y, z in the file's
    length unit plus the residual word (negative = invalid sample).
    analog_frames has shape (frames, subframes, channels) and holds raw,
    uncalibrated values.
    """

    header: C3dHeader
    parameters: list = field(default_factory=list)
    point_frames: np.ndarray = None
    analog_frames: np.ndarray = None

    def get_parameter(self, group, name):
        group, name = group.upper(), name.upper()
        for p in self.parameters:
            if p.group_name == group and p.name == name:
                return p
        return None


@dataclass
class MarkerTrajectorySet:
    """Gap-free trajectories for the canonical marker set.

    positions has shape (frames, 8, 3) in millimetres, markers in
    CANONICAL_MARKERS order.
    """

    labels: tuple
    positions: np.ndarray
    rate: float

    @property
    def frame_count(self):
        return self.positions.shape[0]


@dataclass
class ForcePlateRecord:
    """Calibrated plate channels and plate geometry.

    channels has shape (samples, 6) ordered Fx, Fy, Fz, Mx, My, Mz
    (forces in N, moments in N.mm); corners has shape (4, 2) and holds the
    horizontal quadrilateral of the plate surface.
    """

    channels: np.ndarray
    corners: np.ndarray
    rate: float


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def _u16(data, off):
    return int.from_bytes(data[off:off + 2], "little", signed=False)


def _i16(data, off):
    return int.from_bytes(data[off:off + 2], "little", signed=True)


def _f32(data, off):
    return float(np.frombuffer(data[off:off + 4], dtype="<f4")[0])


def parse_c3d(data):
    """Parse C3D bytes into a C3dFile.

    Raises MagicMismatch, UnsupportedProcessor, TruncatedFile, or
    MalformedParameter on structurally bad input.
    """
    data = bytes(data)
    if len(data) < BLOCK:
        raise TruncatedFile(f"file is {len(data)} bytes, header needs {BLOCK}")
    first_param_block = data[0]
    if data[1] != 0x50:
        raise MagicMismatch(f"header signature byte is 0x{data[1]:02x}, expected 0x50")
    if first_param_block < 1:
        raise MalformedParameter("parameter section pointer is zero")

    point_count = _u16(data, 2)
    analog_per_frame_total = _u16(data, 4)
    first_frame = _u16(data, 6)
    last_frame = _u16(data, 8)
    max_gap = _u16(data, 10)
    point_scale = _f32(data, 12)
    data_start_block = _u16(data, 16)
    analog_subframes = _u16(data, 18)
    point_rate = _f32(data, 20)

    if analog_subframes > 0:
        if analog_per_frame_total % analog_subframes:
            raise MalformedParameter(
                "analog words per frame not divisible by subframe count"
            )
        channel_count = analog_per_frame_total // analog_subframes
    else:
        channel_count = 0

    header = C3dHeader(
        point_count=point_count,
        analog_channel_count=channel_count,
        analog_samples_per_frame=analog_subframes,
        first_frame=first_frame,
        last_frame=last_frame,
        max_interpolation_gap=max_gap,
        point_scale=point_scale,
        data_start_block=data_start_block,
        point_rate=point_rate,
    )

    parameters = _parse_parameter_section(data, first_param_block)

    frames = header.frame_count
    if frames < 0:
        raise MalformedParameter("last frame precedes first frame")
    words_points = 4 * point_count
    words_analog = analog_subframes * channel_count
    data_off = (data_start_block - 1) * BLOCK
    if data_off < 0 or data_off > len(data):
        raise TruncatedFile("data section pointer leaves the file")

    width = 4 if point_scale < 0 else 2
    need = frames * (words_points + words_analog) * width
    if len(data) - data_off < need:
        raise TruncatedFile(
            f"data section needs {need} bytes, file has {len(data) - data_off}"
        )
    raw = np.frombuffer(
        data, dtype="<f4" if point_scale < 0 else "<i2",
        count=frames * (words_points + words_analog), offset=data_off,
    ).reshape(frames, words_points + words_analog)

    points = raw[:, :words_points].astype(float).reshape(frames, point_count, 4)
    analog = raw[:, words_points:].astype(float).reshape(
        frames, analog_subframes, channel_count
    )
    if point_scale > 0:
        points = points.copy()
        points[:, :, :3] *= point_scale
    return C3dFile(header, parameters, points, analog)


def _parse_parameter_section(data, first_param_block):
    off = (first_param_block - 1) * BLOCK
    if off + 4 > len(data):
        raise TruncatedFile("parameter section prologue leaves the file")
    n_blocks = data[off + 2]
    proc = data[off + 3]
    if proc != _INTEL:
        from .errors import UnsupportedProcessor

        raise UnsupportedProcessor(
            f"processor code {proc}; only Intel ({_INTEL}) is supported"
        )
    end = min(off + max(n_blocks, 1) * BLOCK, len(data))

    group_names = {}
    pending = []  # (group_id, name, type_code, dims, payload, description)
    pos = off + 4
    while pos < end:
        name_len = int.from_bytes(data[pos:pos + 1], "little", signed=True)
        if name_len == 0:
            break
        gid = int.from_bytes(data[pos + 1:pos + 2], "little", signed=True)
        width_name = abs(name_len)  # negative means "locked", same layout
        if pos + 2 + width_name + 2 > end:
            raise MalformedParameter("record name runs past the parameter section")
        name = data[pos + 2:pos + 2 + width_name].decode("ascii", "replace").upper()
        opos = pos + 2 + width_name
        next_off = _i16(data, opos)
        body = opos + 2

        if gid < 0:  # group definition: description only
            if body + 1 > end:
                raise MalformedParameter(f"group {name} truncated")
            dlen = data[body]
            if body + 1 + dlen > end:
                raise MalformedParameter(f"group {name} description truncated")
            group_names[-gid] = name
        elif gid > 0:  # parameter
            if body + 2 > end:
                raise MalformedParameter(f"parameter {name} truncated")
            type_code = int.from_bytes(data[body:body + 1], "little", signed=True)
            if type_code not in _TYPE_WIDTH:
                raise MalformedParameter(
                    f"parameter {name} has unknown type code {type_code}"
                )
            ndims = data[body + 1]
            if body + 2 + ndims > end:
                raise MalformedParameter(f"parameter {name} dimensions truncated")
            dims = tuple(data[body + 2:body + 2 + ndims])
            count = 1
            for d in dims:
                count *= d
            psize = count * _TYPE_WIDTH[type_code]
            pstart = body + 2 + ndims
            if pstart + psize + 1 > end:
                raise MalformedParameter(f"parameter {name} payload truncated")
            payload = data[pstart:pstart + psize]
            dlen = data[pstart + psize]
            dstart = pstart + psize + 1
            if dstart + dlen > end:
                raise MalformedParameter(f"parameter {name} description truncated")
            desc = data[dstart:dstart + dlen].decode("ascii", "replace")
            pending.append((gid, name, type_code, dims, payload, desc))
        else:
            raise MalformedParameter(f"record {name} has group id 0")

        if next_off == 0:
            break
        nxt = opos + 2 + next_off
        if nxt <= pos or nxt > end:
            raise MalformedParameter(f"record {name} chains out of the section")
        pos = nxt

    parameters = []
    for gid, name, type_code, dims, payload, desc in pending:
        if gid not in group_names:
            raise MalformedParameter(f"parameter {name} references unknown group {gid}")
        parameters.append(
            ParameterRecord(
                group_name=group_names[gid],
                name=name,
                scalar_type=_TYPE_NAME[type_code],
                dimensions=dims,
                payload=bytes(payload),
                description=desc,
            )
        )
    return parameters


# --------------------------------------------------------------------------
# writing
# --------------------------------------------------------------------------

def _encode_parameter_records(parameters):
    """Serialize groups and parameters, returning the record byte string.

    Groups are assigned ids in order of first appearance; each group record
    is followed by its parameters. The final record carries a zero next
    pointer.
    """
    order = []
    for p in parameters:
        if p.group_name not in order:
            order.append(p.group_name)
    if len(order) > 127:
        raise MalformedParameter("more than 127 parameter groups")

    chunks = []  # (bytes_before_offset, bytes_after_offset)
    for gi, gname in enumerate(order, start=1):
        gbytes = gname.encode("ascii")
        head = bytes([len(gbytes) & 0xFF, (-gi) & 0xFF]) + gbytes
        chunks.append((head, bytes([0])))  # empty group description
        for p in parameters:
            if p.group_name != gname:
                continue
            nbytes = p.name.encode("ascii")
            if not (0 < len(nbytes) < 128):
                raise MalformedParameter(f"bad parameter name {p.name!r}")
            type_code = _NAME_TYPE[p.scalar_type]
            count = 1
            for d in p.dimensions:
                count *= d
            if len(p.payload) != count * _TYPE_WIDTH[type_code]:
                raise MalformedParameter(
                    f"{p.group_name}:{p.name} payload is {len(p.payload)} bytes, "
                    f"dimensions imply {count * _TYPE_WIDTH[type_code]}"
                )
            if len(p.dimensions) > 7 or any(d > 255 for d in p.dimensions):
                raise MalformedParameter(f"{p.group_name}:{p.name} dimensions invalid")
            desc = p.description.encode("ascii", "replace")[:255]
            head = bytes([len(nbytes), gi]) + nbytes
            body = (
                int(type_code).to_bytes(1, "little", signed=True)
                + bytes([len(p.dimensions)])
                + bytes(p.dimensions)
                + p.payload
                + bytes([len(desc)])
                + desc
            )
            chunks.append((head, body))

    out = bytearray()
    for i, (head, body) in enumerate(chunks):
        last = i == len(chunks) - 1
        # The chain offset counts from the byte after the offset field, so
        # for back-to-back records it is simply the body length.
        next_off = 0 if last else len(body)
        out += head
        out += int(next_off).to_bytes(2, "little", signed=True)
        out += body
    return bytes(out)


def parameter_section_blocks(parameters):
    """Number of 512-byte blocks the parameter section will occupy."""
    record_bytes = len(_encode_parameter_records(parameters))
    return max(1, -(-(4 + record_bytes) // BLOCK))


def write_c3d(file):
    """Serialize a C3dFile to Intel float-storage bytes.

    The emitted point scale is -|scale| (float storage). The data section is
    placed at the declared data_start_block when the parameter section fits
    before it (preserving original padding); otherwise at the first block
    after the parameters. POINT:SCALE and POINT:DATA_START parameters, when
    present, are rewritten to match the emitted header.
    """
    h = file.header
    points = np.asarray(file.point_frames, dtype=float)
    analog = np.asarray(file.analog_frames, dtype=float)
    frames = h.frame_count
    if points.shape != (frames, h.point_count, 4):
        raise UnrepresentableValue(
            f"point data shape {points.shape} does not match header "
            f"({frames}, {h.point_count}, 4)"
        )
    if analog.shape != (frames, h.analog_samples_per_frame, h.analog_channel_count):
        raise UnrepresentableValue(
            f"analog data shape {analog.shape} does not match header "
            f"({frames}, {h.analog_samples_per_frame}, {h.analog_channel_count})"
        )
    for name, arr in (("point", points), ("analog", analog)):
        if arr.size and not np.isfinite(arr).all():
            raise UnrepresentableValue(f"{name} data contains non-finite values")
        if arr.size and np.abs(arr).max() > np.finfo(np.float32).max:
            raise UnrepresentableValue(f"{name} data overflows float32")
    if not (0 <= h.first_frame <= h.last_frame <= 0xFFFF):
        raise UnrepresentableValue("frame range does not fit the header words")

    scale_out = -abs(h.point_scale) if h.point_scale else -1.0

    param_blocks = parameter_section_blocks(file.parameters)
    min_start = 2 + param_blocks
    data_start = h.data_start_block if h.data_start_block >= min_start else min_start
    pad_blocks = data_start - 2

    parameters = [_patched(p, scale_out, data_start) for p in file.parameters]
    records = _encode_parameter_records(parameters)

    header = bytearray(BLOCK)
    header[0] = 2
    header[1] = 0x50
    header[2:4] = int(h.point_count).to_bytes(2, "little")
    header[4:6] = int(
        h.analog_samples_per_frame * h.analog_channel_count
    ).to_bytes(2, "little")
    header[6:8] = int(h.first_frame).to_bytes(2, "little")
    header[8:10] = int(h.last_frame).to_bytes(2, "little")
    header[10:12] = int(h.max_interpolation_gap).to_bytes(2, "little")
    header[12:16] = np.float32(scale_out).tobytes()
    header[16:18] = int(data_start).to_bytes(2, "little")
    header[18:20] = int(h.analog_samples_per_frame).to_bytes(2, "little")
    header[20:24] = np.float32(h.point_rate).tobytes()

    param_section = bytearray(pad_blocks * BLOCK)
    param_section[0] = 1
    param_section[1] = 0x50
    param_section[2] = param_blocks
    param_section[3] = _INTEL
    param_section[4:4 + len(records)] = records

    frame_grid = np.concatenate(
        [
            points.reshape(frames, 4 * h.point_count),
            analog.reshape(frames, h.analog_samples_per_frame * h.analog_channel_count),
        ],
        axis=1,
    ).astype("<f4")
    payload = frame_grid.tobytes()
    if len(payload) % BLOCK:
        payload += bytes(BLOCK - len(payload) % BLOCK)

    return bytes(header) + bytes(param_section) + payload


def _patched(p, scale_out, data_start):
    if p.group_name == "POINT" and p.name == "SCALE" and p.scalar_type == "float32":
        return ParameterRecord(
            p.group_name, p.name, p.scalar_type, p.dimensions,
            np.float32(scale_out).tobytes(), p.description,
        )
    if p.group_name == "POINT" and p.name == "DATA_START" and p.scalar_type == "int16":
        return ParameterRecord(
            p.group_name, p.name, p.scalar_type, p.dimensions,
            int(data_start).to_bytes(2, "little", signed=True), p.description,
        )
    return p


# --------------------------------------------------------------------------
# extraction
# --------------------------------------------------------------------------

def extract_markers(file, targets=CANONICAL_MARKERS, prefix=""):
    """Pull the canonical marker set out of a parsed file.

    Labels are matched case-insensitively after stripping, either bare or
    with the given subject prefix (for example prefix "S01:" matches
    "S01:SACR"). Raises MissingMarker when any target is absent and
    GappedTrajectory when a matched trajectory has an invalid residual or a
    non-finite coordinate anywhere in the frame range.
    """
    labels_param = file.get_parameter("POINT", "LABELS")
    if labels_param is None:
        raise MissingMarker("file has no POINT:LABELS parameter")
    labels = labels_param.strings()

    def canon(s):
        return s.strip().upper()

    lut = {}
    for i, lab in enumerate(labels[: file.header.point_count]):
        lut.setdefault(canon(lab), i)

    idx, missing = [], []
    for t in targets:
        i = lut.get(canon(prefix + t), lut.get(canon(t)))
        if i is None:
            missing.append(t)
        else:
            idx.append(i)
    if missing:
        raise MissingMarker(f"markers not found: {', '.join(missing)}")

    pts = file.point_frames[:, idx, :]
    residual_bad = pts[:, :, 3] < 0
    coords = pts[:, :, :3]
    finite_bad = ~np.isfinite(coords).all(axis=2)
    bad = residual_bad | finite_bad
    if bad.any():
        f, m = np.argwhere(bad)[0]
        raise GappedTrajectory(
            f"marker {targets[m]} invalid at frame {int(f)} "
            f"({int(bad.sum())} bad samples in total)"
        )
    return MarkerTrajectorySet(
        labels=tuple(targets),
        positions=np.ascontiguousarray(coords),
        rate=file.header.point_rate,
    )


def extract_force_plate(file, plate_index=0):
    """Calibrated channel series and corners for one force plate.

    Channel mapping comes from FORCE_PLATFORM:CHANNEL (1-based analog
    channel numbers, six per plate); calibration uses ANALOG OFFSET, SCALE
    and GEN_SCALE with identity defaults.
    """
    used_p = file.get_parameter("FORCE_PLATFORM", "USED")
    if used_p is None:
        raise MissingPlate("file has no FORCE_PLATFORM group")
    used = int(used_p.scalar())
    if not (0 <= plate_index < used):
        raise MissingPlate(f"plate {plate_index} requested, file has {used}")

    chan_p = file.get_parameter("FORCE_PLATFORM", "CHANNEL")
    if chan_p is None:
        raise ChannelCountMismatch("FORCE_PLATFORM:CHANNEL parameter missing")
    if not chan_p.dimensions or chan_p.dimensions[0] != 6:
        raise ChannelCountMismatch(
            f"plates must map 6 channels, CHANNEL is shaped {chan_p.dimensions}"
        )
    chan = chan_p.values().astype(int)
    if chan.size < 6 * (plate_index + 1):
        raise ChannelCountMismatch("CHANNEL parameter shorter than declared plates")
    chan = chan[6 * plate_index: 6 * plate_index + 6]

    n_channels = file.header.analog_channel_count
    if np.any(chan < 1) or np.any(chan > n_channels):
        raise ChannelCountMismatch(
            f"channel numbers {chan.tolist()} outside 1..{n_channels}"
        )

    corners_p = file.get_parameter("FORCE_PLATFORM", "CORNERS")
    if corners_p is None:
        raise MissingPlate("FORCE_PLATFORM:CORNERS parameter missing")
    cvals = corners_p.values()
    if cvals.size < 12 * (plate_index + 1):
        raise MissingPlate("CORNERS parameter shorter than declared plates")
    # stored first-index-fastest as (xyz, corner, plate)
    corners = cvals[12 * plate_index: 12 * plate_index + 12].reshape(4, 3)[:, :2]

    offsets = np.zeros(n_channels)
    scales = np.ones(n_channels)
    gen_scale = 1.0
    p = file.get_parameter("ANALOG", "OFFSET")
    if p is not None:
        vals = p.values()
        offsets[: min(n_channels, vals.size)] = vals[:n_channels]
    p = file.get_parameter("ANALOG", "SCALE")
    if p is not None:
        vals = p.values()
        scales[: min(n_channels, vals.size)] = vals[:n_channels]
    p = file.get_parameter("ANALOG", "GEN_SCALE")
    if p is not None:
        gen_scale = p.scalar()

    flat = file.analog_frames.reshape(-1, n_channels)
    cols = chan - 1
    series = (flat[:, cols] - offsets[cols]) * scales[cols] * gen_scale

    return ForcePlateRecord(
        channels=series,
        corners=np.ascontiguousarray(corners, dtype=float),
        rate=file.header.analog_rate,
    )


# --------------------------------------------------------------------------
# construction and comparison
# --------------------------------------------------------------------------

def _char_param(group, name, strings, width=None):
    width = width or max(4, max(len(s) for s in strings))
    payload = b"".join(s.ljust(width).encode("ascii") for s in strings)
    dims = (width,) if len(strings) == 1 else (width, len(strings))
    return ParameterRecord(group, name, "char", dims, payload)


def _i16_param(group, name, values, dims=None):
    arr = np.asarray(values, dtype="<i2").ravel()
    dims = tuple(dims) if dims is not None else (() if arr.size == 1 else (arr.size,))
    return ParameterRecord(group, name, "int16", dims, arr.tobytes())


def _f32_param(group, name, values, dims=None):
    arr = np.asarray(values, dtype="<f4").ravel()
    dims = tuple(dims) if dims is not None else (() if arr.size == 1 else (arr.size,))
    return ParameterRecord(group, name, "float32", dims, arr.tobytes())


def make_c3d(
    markers,
    analog,
    corners,
    marker_rate=250.0,
    analog_rate=2000.0,
    marker_labels=CANONICAL_MARKERS,
    analog_labels=("FX1", "FY1", "FZ1", "MX1", "MY1", "MZ1"),
    analog_offsets=None,
    analog_scales=None,
    gen_scale=1.0,
    first_frame=1,
    label_prefix="",
):
    """Build a standard single-plate C3dFile from plain arrays.

    markers: (frames, n_markers, 3) positions in mm.
    analog: (samples, channels) series in engineering units; they are
        de-calibrated into raw storage using the given offsets/scales
        (identity by default).
    corners: (4, 2) horizontal plate quadrilateral; stored with z = 0.

    The analog rate must be an integer multiple of the marker rate and the
    sample count must equal frames * (analog_rate / marker_rate).
    """
    markers = np.asarray(markers, dtype=float)
    analog = np.asarray(analog, dtype=float)
    frames, n_markers = markers.shape[0], markers.shape[1]
    n_channels = analog.shape[1]
    ratio = analog_rate / marker_rate
    spf = int(round(ratio))
    if abs(ratio - spf) > 1e-9 or spf < 1:
        raise UnrepresentableValue(
            f"analog rate {analog_rate} is not an integer multiple of {marker_rate}"
        )
    if analog.shape[0] != frames * spf:
        raise UnrepresentableValue(
            f"{analog.shape[0]} analog samples, expected {frames * spf}"
        )
    if len(marker_labels) != n_markers:
        raise UnrepresentableValue("marker label count does not match data")

    offsets = np.zeros(n_channels) if analog_offsets is None else np.asarray(
        analog_offsets, dtype=float
    )
    scales = np.ones(n_channels) if analog_scales is None else np.asarray(
        analog_scales, dtype=float
    )
    if np.any(scales == 0) or gen_scale == 0:
        raise UnrepresentableValue("zero analog scale cannot be de-calibrated")
    if np.any(offsets != np.round(offsets)) or np.any(np.abs(offsets) > 32767):
        raise UnrepresentableValue("analog offsets must be 16-bit integers")
    raw = analog / (scales * gen_scale) + offsets

    labels = [label_prefix + lab for lab in marker_labels]
    corners3 = np.zeros((4, 3))
    corners3[:, :2] = np.asarray(corners, dtype=float)

    parameters = [
        _i16_param("POINT", "USED", [n_markers]),
        _i16_param("POINT", "FRAMES", [min(frames, 32767)]),
        _f32_param("POINT", "SCALE", [-1.0]),
        _f32_param("POINT", "RATE", [marker_rate]),
        _i16_param("POINT", "DATA_START", [0]),
        _char_param("POINT", "UNITS", ["mm"]),
        _char_param("POINT", "LABELS", labels),
        _i16_param("ANALOG", "USED", [n_channels]),
        _f32_param("ANALOG", "RATE", [analog_rate]),
        _f32_param("ANALOG", "GEN_SCALE", [gen_scale]),
        _f32_param("ANALOG", "SCALE", scales),
        _i16_param("ANALOG", "OFFSET", np.round(offsets).astype(int)),
        _char_param("ANALOG", "LABELS", list(analog_labels)),
        _i16_param("FORCE_PLATFORM", "USED", [1]),
        _i16_param("FORCE_PLATFORM", "TYPE", [2]),
        _i16_param("FORCE_PLATFORM", "ZERO", [0, 0], dims=(2,)),
        _i16_param(
            "FORCE_PLATFORM", "CHANNEL", np.arange(1, 7), dims=(6, 1)
        ),
        # CORNERS payload order: first index fastest over (xyz, corner, plate),
        # so corner j occupies flat slots 3j..3j+2.
        _f32_param(
            "FORCE_PLATFORM", "CORNERS", corners3.ravel(), dims=(3, 4, 1)
        ),
        _f32_param("FORCE_PLATFORM", "ORIGIN", [0.0, 0.0, 0.0], dims=(3, 1)),
    ]

    data_start = 2 + parameter_section_blocks(parameters)
    for i, p in enumerate(parameters):
        if p.group_name == "POINT" and p.name == "DATA_START":
            parameters[i] = _i16_param("POINT", "DATA_START", [data_start])

    header = C3dHeader(
        point_count=n_markers,
        analog_channel_count=n_channels,
        analog_samples_per_frame=spf,
        first_frame=first_frame,
        last_frame=first_frame + frames - 1,
        max_interpolation_gap=10,
        point_scale=-1.0,
        data_start_block=data_start,
        point_rate=marker_rate,
    )
    point_frames = np.zeros((frames, n_markers, 4))
    point_frames[:, :, :3] = markers
    analog_frames = raw.reshape(frames, spf, n_channels)
    return C3dFile(header, parameters, point_frames, analog_frames)


def c3d_equal(a, b):
    """Field-for-field equality of two parsed files (exact array compare)."""
    if a.header != b.header:
        return False
    if len(a.parameters) != len(b.parameters):
        return False
    for pa, pb in zip(a.parameters, b.parameters):
        if (pa.group_name, pa.name, pa.scalar_type, tuple(pa.dimensions),
                pa.payload, pa.description) != (
                pb.group_name, pb.name, pb.scalar_type, tuple(pb.dimensions),
                pb.payload, pb.description):
            return False
    return (
        np.array_equal(a.point_frames, b.point_frames)
        and np.array_equal(a.analog_frames, b.analog_frames)
    )
