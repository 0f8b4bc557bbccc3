import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Text, Tuple, Union

import numpy as np
from pandas import DataFrame
from PIL import Image as PILImage
from scipy import ndimage

from .base import BaseComponent
from .exceptions import (
    ConfigurationException,
    DimensionMismatchException,
    EmptyMaskException,
    ImageFormatException,
)

logger = logging.getLogger(__name__)

SUPPORTED_ALPHAS = tuple(Fraction(1, d) for d in (10, 9, 8, 7, 6, 5))
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

GRAYMAP_MAGICS = (b'P2', b'P5')
PIXMAP_MAGICS = (b'P3', b'P6')


@dataclass(frozen=True, eq=False)
class Image:
    """
    A grayscale raster. ``pixels`` is a (height, width) uint8 array in row-major order.
    """
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels)
        if pixels.ndim != 2 or pixels.size == 0:
            raise DimensionMismatchException(f"An image needs a non-empty 2-D pixel array, got shape {pixels.shape}.")
        if pixels.dtype != np.uint8:
            if pixels.min() < 0 or pixels.max() > 255:
                raise ImageFormatException('pixels', "intensities must lie in [0, 255].")
            pixels = pixels.astype(np.uint8)
        pixels.setflags(write=False)
        object.__setattr__(self, 'pixels', pixels)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.width, self.height

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


@dataclass(frozen=True, eq=False)
class Mask:
    """
    Iris mask, True marks an iris pixel.
    """
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise DimensionMismatchException(f"A mask needs a 2-D array, got shape {bits.shape}.")
        bits.setflags(write=False)
        object.__setattr__(self, 'bits', bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


def parse_alpha(value: Union[None, Text, float, Fraction]) -> Optional[Fraction]:
    """
    Turn a user supplied filter weight into one of the supported fractions.

    :param value: None / "none" for no filter, a fraction string such as "1/7", a float, or a Fraction.
    :return: the matching Fraction, or None when no filter is requested.
    """
    if value is None or (isinstance(value, str) and value.strip().lower() in ('', 'none', 'null')):
        return None

    try:
        if isinstance(value, str):
            alpha = Fraction(value.strip())
        else:
            alpha = Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError):
        raise ConfigurationException(f"Cannot read filter weight {value!r}.")

    alpha = alpha.limit_denominator(10)
    if alpha not in SUPPORTED_ALPHAS:
        supported = ', '.join(str(a) for a in SUPPORTED_ALPHAS)
        raise ConfigurationException(f"Unsupported filter weight {value!r}; choose one of {supported}.")

    return alpha


def format_alpha(alpha: Optional[Fraction]) -> Text:
    return 'none' if alpha is None else str(alpha)


@dataclass(frozen=True)
class SpectralFilter:
    alpha: Optional[Fraction] = None

    def __post_init__(self):
        object.__setattr__(self, 'alpha', parse_alpha(self.alpha))

    @property
    def kernel(self) -> np.ndarray:
        a = float(self.alpha or 0)
        return np.array([[0.0, a, 0.0], [a, 1.0, a], [0.0, a, 0.0]])

    def apply(self, image: Image) -> Image:
        if self.alpha is None:
            return image
        return spectral_filter(image, self.alpha)


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


def _to_intensities(values: np.ndarray) -> np.ndarray:
    # round first, then clamp
    return np.clip(_round_half_up(values), 0, 255).astype(np.uint8)


def _read_netpbm_header(raw: bytes) -> Tuple[bytes, int, int, int, int]:
    """
    Parse magic, width, height and maxval. The last value returned is the offset of the raster, just past the
    single whitespace byte that ends the header.
    """
    tokens = []
    position = 0
    while len(tokens) < 4:
        while position < len(raw) and raw[position:position + 1].isspace():
            position += 1
        if position >= len(raw):
            break
        if raw[position:position + 1] == b'#':
            while position < len(raw) and raw[position:position + 1] not in (b'\n', b'\r'):
                position += 1
            continue
        start = position
        while position < len(raw) and not raw[position:position + 1].isspace() and raw[position:position + 1] != b'#':
            position += 1
        tokens.append(raw[start:position])

    names = ('magic', 'width', 'height', 'maxval')
    if len(tokens) < 4:
        raise ImageFormatException(names[len(tokens)], "header ended before this field.")

    magic = tokens[0]
    if magic not in GRAYMAP_MAGICS + PIXMAP_MAGICS:
        raise ImageFormatException('magic', f"expected one of P2, P3, P5, P6, got {magic!r}.")

    values = []
    for name, token in zip(names[1:], tokens[1:]):
        if not token.isdigit():
            raise ImageFormatException(name, f"expected a positive integer, got {token!r}.")
        values.append(int(token))

    width, height, maxval = values
    if width <= 0:
        raise ImageFormatException('width', "must be positive.")
    if height <= 0:
        raise ImageFormatException('height', "must be positive.")
    if maxval <= 0 or maxval > 255:
        raise ImageFormatException('maxval', f"only 8-bit data (maxval <= 255) is supported, got {maxval}.")

    return magic, width, height, maxval, position + 1


def _decode_raster(raw: bytes, magic: bytes, width: int, height: int, maxval: int, offset: int) -> np.ndarray:
    """
    Decode the raster as stored. Samples are not rescaled to 0..255 when maxval is below 255.
    """
    channels = 3 if magic in PIXMAP_MAGICS else 1
    count = width * height * channels

    if magic in (b'P5', b'P6'):
        data = raw[offset:offset + count]
        if len(data) < count:
            raise ImageFormatException('pixels', f"expected {count} bytes of pixel data, got {len(data)}.")
        samples = np.frombuffer(data, dtype=np.uint8)
    else:
        body = b'\n'.join(line.split(b'#', 1)[0] for line in raw[offset - 1:].splitlines())
        tokens = body.split()
        if len(tokens) < count:
            raise ImageFormatException('pixels', f"expected {count} samples, got {len(tokens)}.")
        if not all(token.isdigit() for token in tokens[:count]):
            raise ImageFormatException('pixels', "ASCII samples must be non-negative integers.")
        samples = np.array([int(token) for token in tokens[:count]], dtype=np.int64)

    if samples.max(initial=0) > maxval:
        raise ImageFormatException('pixels', f"a sample exceeds maxval {maxval}.")

    shape = (height, width, 3) if channels == 3 else (height, width)
    return samples.astype(np.uint8).reshape(shape)


def load_pgm(path: Text) -> Image:
    """
    Load an 8-bit portable graymap (binary P5 or ASCII P2).

    :param path: the path of the graymap file.
    :return: the decoded Image, with exactly the stored dimensions and intensities.
    """
    with open(path, 'rb') as f:
        raw = f.read()

    magic, width, height, maxval, offset = _read_netpbm_header(raw)
    if magic not in GRAYMAP_MAGICS:
        raise ImageFormatException('magic', f"{path} is a pixmap ({magic.decode()}), not a graymap.")

    return Image(_decode_raster(raw, magic, width, height, maxval, offset))


def to_grayscale(color_image: Union[Image, np.ndarray, Sequence[np.ndarray]]) -> Image:
    """
    Convert an RGB raster to luma, round(0.299R + 0.587G + 0.114B). Grayscale input passes through unchanged.

    :param color_image: an Image, a (height, width) or (height, width, 3) array, or a sequence of three channel arrays.
    :return: the grayscale Image.
    """
    if isinstance(color_image, Image):
        return color_image

    if isinstance(color_image, (list, tuple)):
        if len(color_image) != 3:
            raise DimensionMismatchException(f"Expected three colour channels, got {len(color_image)}.")
        channels = [np.asarray(channel) for channel in color_image]
        shapes = {channel.shape for channel in channels}
        if len(shapes) != 1:
            raise DimensionMismatchException(f"Colour channels differ in shape: {sorted(shapes)}.")
        rgb = np.stack(channels, axis=-1)
    else:
        rgb = np.asarray(color_image)

    if rgb.ndim == 2:
        return Image(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionMismatchException(f"Expected an RGB raster of shape (height, width, 3), got {rgb.shape}.")

    rgb = rgb.astype(np.float64)
    luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return Image(_to_intensities(luma))


def load_image(path: Text) -> Image:
    """
    Load a graymap directly, or a pixmap (P3/P6) converted to grayscale.
    """
    with open(path, 'rb') as f:
        raw = f.read()

    magic, width, height, maxval, offset = _read_netpbm_header(raw)
    rgb = _decode_raster(raw, magic, width, height, maxval, offset)
    return Image(rgb) if magic in GRAYMAP_MAGICS else to_grayscale(rgb)


def load_mask(path: Text) -> Mask:
    """
    Load a mask stored as an image; every non-zero pixel marks the iris.
    """
    return Mask(load_image(path).pixels > 0)


def save_pgm(image: Image, path: Text) -> None:
    PILImage.fromarray(np.ascontiguousarray(image.pixels)).save(path, format='PPM')


def apply_mask_and_crop(image: Image, mask: Mask) -> Image:
    """
    Zero every pixel outside the mask and crop to the tight bounding rectangle of the mask.

    :param image: the iris image.
    :param mask: a mask with the same dimensions as the image.
    :return: the cropped Image.
    """
    if (mask.width, mask.height) != (image.width, image.height):
        raise DimensionMismatchException(
            f"Mask is {mask.width}x{mask.height} but the image is {image.width}x{image.height}."
        )

    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskException("The mask has no iris pixels; the image is rejected.")

    masked = np.where(mask.bits, image.pixels, 0).astype(np.uint8)
    return Image(masked[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1])


def resize_bilinear(image: Image, width: int = 200, height: int = 200) -> Image:
    """
    Bilinear resize with corner-aligned sampling: output corners sample input corners exactly.
    """
    if width < 1 or height < 1:
        raise DimensionMismatchException(f"Target size must be positive, got {width}x{height}.")
    if (image.width, image.height) == (width, height):
        return image

    rows = np.linspace(0.0, image.height - 1, height) if height > 1 else np.zeros(1)
    cols = np.linspace(0.0, image.width - 1, width) if width > 1 else np.zeros(1)
    grid_rows, grid_cols = np.meshgrid(rows, cols, indexing='ij')

    sampled = ndimage.map_coordinates(
        image.pixels.astype(np.float64),
        [grid_rows, grid_cols],
        order=1,
        mode='nearest',
    )
    return Image(_to_intensities(sampled))


def stretch_contrast(image: Image) -> Image:
    """
    Linear histogram stretching of [min, max] onto [0, 255]. A constant image maps to all zeros.
    """
    lo = int(image.pixels.min())
    hi = int(image.pixels.max())
    if lo == hi:
        return Image(np.zeros_like(image.pixels))

    stretched = (image.pixels.astype(np.float64) - lo) * 255.0 / (hi - lo)
    return Image(_to_intensities(stretched))


def equalize_histogram(image: Image) -> Image:
    """
    Cumulative-histogram equalization. A constant image maps to all zeros.
    """
    hist = np.bincount(image.pixels.ravel(), minlength=256)
    cdf = hist.cumsum()
    cdf_min = cdf[np.flatnonzero(hist)[0]]
    span = cdf[-1] - cdf_min
    if span == 0:
        return Image(np.zeros_like(image.pixels))

    lut = _to_intensities((cdf - cdf_min) * 255.0 / span)
    return Image(lut[image.pixels])


def remove_reflections(image: Image, threshold: int = 250) -> Image:
    """
    Fill specular reflections: every 8-connected region of pixels >= threshold takes the rounded mean
    of its one-pixel-wide outer boundary. Regions on the image border use the boundary pixels that exist.

    :param image: a contrast-stretched image.
    :param threshold: the intensity at which a pixel counts as a reflection.
    :return: the Image with reflections filled. A fully saturated image is returned unchanged with a warning.
    """
    bright = image.pixels >= threshold
    if not bright.any():
        return image
    if bright.all():
        logger.warning(f"Every pixel is >= {threshold}; reflection removal skipped.")
        return image

    labels, count = ndimage.label(bright, structure=EIGHT_CONNECTED)
    filled = image.pixels.copy()

    for index, window in enumerate(ndimage.find_objects(labels), start=1):
        # grow the window by one pixel so the ring fits inside it
        rows = slice(max(window[0].start - 1, 0), min(window[0].stop + 1, image.height))
        cols = slice(max(window[1].start - 1, 0), min(window[1].stop + 1, image.width))

        region = labels[rows, cols] == index
        ring = ndimage.binary_dilation(region, structure=EIGHT_CONNECTED) & ~region
        fill_value = _round_half_up(image.pixels[rows, cols][ring].mean())

        filled[rows, cols][region] = np.uint8(fill_value)

    logger.debug(f"Filled {count} reflection region(s).")
    return Image(filled)


def spectral_filter(image: Image, alpha: Union[Fraction, Text, float]) -> Image:
    """
    Convolve with the cross kernel [[0, a, 0], [a, 1, a], [0, a, 0]] using replicate border padding.

    :param image: the image to enhance.
    :param alpha: one of 1/10, 1/9, 1/8, 1/7, 1/6, 1/5.
    :return: the spectral enhanced Image, rounded and clamped to [0, 255].
    """
    alpha = parse_alpha(alpha)
    if alpha is None:
        raise ConfigurationException("A spectral filter needs a weight.")

    kernel = SpectralFilter(alpha).kernel
    convolved = ndimage.convolve(image.pixels.astype(np.float64), kernel, mode='nearest')
    return Image(_to_intensities(convolved))


class Preprocessor(BaseComponent):
    """
    Mask-crop, resize, contrast enhancement, reflection removal and an optional spectral filter, in that order.
    """

    def __init__(self, config=None, **overrides):
        super().__init__(config, **overrides)

        self.image_size = int(self.config['IMAGE_SIZE'])
        self.reflect_threshold = int(self.config['REFLECT_THRESHOLD'])
        self.remove_reflections = bool(self.config['REMOVE_REFLECTIONS'])
        self.equalize = str(self.config['EQUALIZE']).lower()
        self.spectral_filter = SpectralFilter(self.config.get('ALPHA'))

        if self.equalize not in ('stretch', 'histogram'):
            raise ConfigurationException(f"EQUALIZE must be 'stretch' or 'histogram', got {self.equalize!r}.")
        if not 0 <= self.reflect_threshold <= 255:
            raise ConfigurationException(f"REFLECT_THRESHOLD must lie in [0, 255], got {self.reflect_threshold}.")

    def preprocess(self, image: Image, mask: Optional[Mask] = None) -> Image:
        """
        Run the full preprocessing chain on one image.

        :param image: a grayscale Image.
        :param mask: the iris mask of the image. If not provided, the whole image is used.
        :return: the preprocessed Image of IMAGE_SIZE x IMAGE_SIZE pixels.
        """
        if mask is not None:
            image = apply_mask_and_crop(image, mask)

        image = resize_bilinear(image, self.image_size, self.image_size)
        image = stretch_contrast(image) if self.equalize == 'stretch' else equalize_histogram(image)

        if self.remove_reflections:
            image = remove_reflections(image, self.reflect_threshold)

        return self.spectral_filter.apply(image)

    def preprocess_file(self, image_path: Text, mask_path: Optional[Text] = None) -> Image:
        mask = load_mask(mask_path) if mask_path else None
        return self.preprocess(load_image(image_path), mask)

    def preprocess_in_df(self, df: DataFrame, image_column: Text, mask_column: Optional[Text] = None) -> DataFrame:
        """
        Preprocess the images referenced by a DataFrame.

        :param df: a pandas DataFrame containing the image paths.
        :param image_column: the name of the column containing the image paths.
        :param mask_column: the name of the column containing the mask paths. Empty cells mean no mask.
        :return: the DataFrame with the preprocessed Images added as a new column called 'preprocessed'.
        """
        masks = df[mask_column].tolist() if mask_column else [None] * len(df)
        df['preprocessed'] = [
            self.preprocess_file(image_path, mask_path if isinstance(mask_path, str) and mask_path else None)
            for image_path, mask_path in zip(df[image_column].tolist(), masks)
        ]
        return df
