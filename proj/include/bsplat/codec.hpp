#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsplat/math.hpp"
#include "bsplat/scene_model.hpp"

namespace bsplat {

inline constexpr std::uint32_t kStreamVersion = 1;

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

/// Uniform quantizer over [lo, hi] with 2^bits levels. A channel whose
/// values are all equal is constant: it carries no payload and decodes to lo.
struct ChannelQuant {
  int bits = 8;
  float lo = 0.0f;
  float hi = 0.0f;

  bool constant() const { return !(hi > lo); }
  std::uint32_t max_code() const { return (1u << bits) - 1u; }
  /// (hi - lo) / (2^bits - 1); zero for constant channels.
  double step() const;

  /// Range of `values` at the given depth. Throws InvalidArgument unless
  /// bits is 8 or 16, NumericError on non-finite input.
  static ChannelQuant fit(std::span<const float> values, int bits);
};

std::vector<std::uint16_t> quantize(std::span<const float> values, const ChannelQuant& q);
std::vector<float> dequantize(std::span<const std::uint16_t> codes, const ChannelQuant& q);

// ---------------------------------------------------------------------------
// Static-branch stages
// ---------------------------------------------------------------------------

struct StaticSplit {
  std::vector<std::size_t> foreground;  ///< ascending
  std::vector<std::size_t> background;  ///< d > mean + 3 std, ascending
  double mean_distance = 0.0;
  double std_distance = 0.0;
};

/// Splits points by distance to their centroid. Throws InvalidArgument for
/// fewer than 2 points.
StaticSplit split_static_outliers(std::span<const Vec3f> positions);

/// Depth-first leaf order of a median-split KD-tree. Each node splits on its
/// widest axis (lowest axis on ties); the lower half gets ceil(n/2) points.
std::vector<std::size_t> kd_reorder(std::span<const Vec3f> positions);

/// residual[0] = code[0]; residual[i] = code[i] - code[i-1] mod 2^bits.
std::vector<std::uint16_t> predictive_encode(std::span<const std::uint16_t> codes, int bits);
std::vector<std::uint16_t> predictive_decode(std::span<const std::uint16_t> residuals, int bits);

// ---------------------------------------------------------------------------
// Entropy coding
// ---------------------------------------------------------------------------

/// Adaptive range coding of symbols below 2^bits (1 <= bits <= 16). Symbols
/// wider than 8 bits are coded as a high byte followed by a low byte whose
/// model is selected by the high byte.
std::vector<std::uint8_t> entropy_encode(std::span<const std::uint16_t> symbols, int bits);
std::vector<std::uint16_t> entropy_decode(std::span<const std::uint8_t> bytes, std::size_t count, int bits);

/// Symbol coders a channel can choose from. Adaptive is entropy_encode.
/// Classes codes the bit length of each symbol with an adaptive model and the
/// bits below the leading one at even odds; it adapts quickly on short
/// channels. Packed stores `bits` bits per symbol.
enum class SymbolCoder : std::uint8_t { Adaptive = 0, Classes = 1, Packed = 2 };

std::vector<std::uint8_t> encode_symbols(std::span<const std::uint16_t> symbols, int bits, SymbolCoder coder);
/// Throws FormatError when a packed payload is too short.
std::vector<std::uint16_t> decode_symbols(std::span<const std::uint8_t> bytes, std::size_t count, int bits,
                                          SymbolCoder coder);

/// Maps a ring residual to 0, 1, 2, ... by magnitude (0, -1, +1, -2, ...).
std::uint16_t fold_residual(std::uint16_t r, int bits);
std::uint16_t unfold_residual(std::uint16_t z, int bits);

/// Coded size of one channel of codes in the given order with delta
/// prediction, as the static branch would store it.
std::size_t coded_channel_size(std::span<const std::uint16_t> codes, int bits);

// ---------------------------------------------------------------------------
// Dynamic-branch stages
// ---------------------------------------------------------------------------

/// Indices of the floor(fraction * n) values farthest from the median
/// (ties broken by lower index), ascending.
std::vector<std::size_t> select_dynamic_outliers(std::span<const float> values, double fraction = 0.05);

/// ceil(sqrt(n)): side of the square plane holding n values.
std::size_t plane_side(std::size_t n);

/// Lays codes row-major into a side x side plane, zero padded.
std::vector<std::uint16_t> to_plane(std::span<const std::uint16_t> codes, std::size_t side);

/// Plane prediction: left neighbour, or the one above in the first column.
std::vector<std::uint16_t> plane_predict_encode(std::span<const std::uint16_t> plane, std::size_t side, int bits);
std::vector<std::uint16_t> plane_predict_decode(std::span<const std::uint16_t> residuals, std::size_t side,
                                                int bits);

/// Hands attribute planes to an outside video encoder through temporary PGM
/// files. Placeholders: {in} {out} {width} {height} {bits} {pix_fmt}.
/// Lossy encoders void the half-step error bound.
struct ExternalVideoCodec {
  std::string encode_command;
  std::string decode_command;

  /// H.264 through ffmpeg: YUV 4:4:4, preset medium, constant QP 20, no
  /// B-frames, 3 reference frames.
  static ExternalVideoCodec h264();
};

struct CodecOptions {
  std::optional<ExternalVideoCodec> external;
  double dynamic_outlier_fraction = 0.05;
};

// ---------------------------------------------------------------------------
// Full stream
// ---------------------------------------------------------------------------

struct ChannelInfo {
  std::string name;
  int bits = 8;
};

/// Scalar channels of a Gaussian record in stream order.
std::vector<ChannelInfo> codec_channels(Kind kind, int keyframes, int sh_degree);

/// Gaussian i flattened into the channel order of codec_channels.
std::vector<float> codec_record(const GaussianSet& set, std::size_t i);

/// Coding order: decompress(compress(x)) matches x.select(codec_order(x)).
/// Kinds keep their slots; statics are reordered as foreground in KD order
/// then background, dynamics by KD order of their trajectory means.
std::vector<std::size_t> codec_order(const GaussianSet& set, const CodecOptions& options = {});

enum class ChannelMode : std::uint8_t { Direct = 0, Predictive = 1, External = 2 };

struct ChannelHeader {
  ChannelInfo info;
  ChannelQuant quant;
  ChannelMode mode = ChannelMode::Direct;
  SymbolCoder coder = SymbolCoder::Adaptive;
  std::uint32_t outliers = 0;  ///< dynamic channels only
};

struct StreamInfo {
  std::uint64_t n = 0, n_static = 0, n_dynamic = 0, n_background = 0;
  int keyframes = 0;
  int sh_degree = 0;
  std::uint32_t plane_side = 0;
  std::vector<ChannelHeader> static_channels;
  std::vector<ChannelHeader> dynamic_channels;
  /// kinds, static outliers, static main, dynamic outliers, dynamic main
  std::array<std::uint64_t, 5> section_bytes{};
  std::size_t total_bytes = 0;
};

std::vector<std::uint8_t> compress(const GaussianSet& set, const CodecOptions& options = {});
/// Throws FormatError on bad magic, version, checksum or layout.
GaussianSet decompress(std::span<const std::uint8_t> stream, const CodecOptions& options = {});
/// Header fields of a stream after verifying its checksum.
StreamInfo inspect_stream(std::span<const std::uint8_t> stream);

}  // namespace bsplat
