#include "bsplat/codec.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include <unistd.h>

#include "bsplat/bytes.hpp"
#include "bsplat/error.hpp"
#include "bsplat/parallel.hpp"

namespace bsplat {

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

double ChannelQuant::step() const {
  if (constant()) return 0.0;
  return (static_cast<double>(hi) - static_cast<double>(lo)) / static_cast<double>(max_code());
}

ChannelQuant ChannelQuant::fit(std::span<const float> values, int bits) {
  if (bits != 8 && bits != 16) throw InvalidArgument("bit depth must be 8 or 16");
  ChannelQuant q;
  q.bits = bits;
  if (values.empty()) return q;
  q.lo = q.hi = values[0];
  for (float v : values) {
    if (!std::isfinite(v)) throw NumericError("cannot quantize a non-finite value");
    q.lo = std::min(q.lo, v);
    q.hi = std::max(q.hi, v);
  }
  return q;
}

std::vector<std::uint16_t> quantize(std::span<const float> values, const ChannelQuant& q) {
  std::vector<std::uint16_t> codes(values.size(), 0);
  if (q.constant()) return codes;
  const double step = q.step();
  const double top = q.max_code();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw NumericError("cannot quantize a non-finite value");
    const double c = std::round((static_cast<double>(values[i]) - q.lo) / step);
    codes[i] = static_cast<std::uint16_t>(std::clamp(c, 0.0, top));
  }
  return codes;
}

std::vector<float> dequantize(std::span<const std::uint16_t> codes, const ChannelQuant& q) {
  std::vector<float> values(codes.size(), q.lo);
  if (q.constant()) return values;
  const double step = q.step();
  for (std::size_t i = 0; i < codes.size(); ++i)
    values[i] = codes[i] >= q.max_code() ? q.hi : static_cast<float>(q.lo + codes[i] * step);
  return values;
}

// ---------------------------------------------------------------------------
// Static-branch stages
// ---------------------------------------------------------------------------

StaticSplit split_static_outliers(std::span<const Vec3f> positions) {
  const std::size_t n = positions.size();
  if (n < 2) throw InvalidArgument("outlier split needs at least 2 points");
  Vec3d centroid;
  for (const auto& p : positions) centroid += p.cast<double>();
  centroid *= 1.0 / static_cast<double>(n);
  std::vector<double> d(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = norm(positions[i].cast<double>() - centroid);
    mean += d[i];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : d) var += (x - mean) * (x - mean);
  StaticSplit s;
  s.mean_distance = mean;
  s.std_distance = std::sqrt(var / static_cast<double>(n));
  const double threshold = mean + 3.0 * s.std_distance;
  for (std::size_t i = 0; i < n; ++i) (d[i] > threshold ? s.background : s.foreground).push_back(i);
  return s;
}

namespace {

void kd_split(std::span<const Vec3f> p, std::vector<std::size_t>::iterator begin,
              std::vector<std::size_t>::iterator end) {
  const auto n = end - begin;
  if (n <= 1) return;
  Vec3f lo = p[*begin], hi = p[*begin];
  for (auto it = begin; it != end; ++it)
    for (std::size_t a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[*it][a]);
      hi[a] = std::max(hi[a], p[*it][a]);
    }
  std::size_t axis = 0;
  for (std::size_t a = 1; a < 3; ++a)
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  std::stable_sort(begin, end, [&](std::size_t a, std::size_t b) { return p[a][axis] < p[b][axis]; });
  const auto mid = begin + (n + 1) / 2;
  kd_split(p, begin, mid);
  kd_split(p, mid, end);
}

}  // namespace

std::vector<std::size_t> kd_reorder(std::span<const Vec3f> positions) {
  std::vector<std::size_t> order(positions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  kd_split(positions, order.begin(), order.end());
  return order;
}

std::vector<std::uint16_t> predictive_encode(std::span<const std::uint16_t> codes, int bits) {
  const std::uint32_t mask = (1u << bits) - 1u;
  std::vector<std::uint16_t> r(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i)
    r[i] = static_cast<std::uint16_t>(i == 0 ? codes[0] : (codes[i] - codes[i - 1]) & mask);
  return r;
}

std::vector<std::uint16_t> predictive_decode(std::span<const std::uint16_t> residuals, int bits) {
  const std::uint32_t mask = (1u << bits) - 1u;
  std::vector<std::uint16_t> c(residuals.size());
  for (std::size_t i = 0; i < residuals.size(); ++i)
    c[i] = static_cast<std::uint16_t>(i == 0 ? residuals[0] & mask : (c[i - 1] + residuals[i]) & mask);
  return c;
}

// ---------------------------------------------------------------------------
// Range coder
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kTop = 1u << 24;
constexpr std::uint32_t kMaxTotal = 1u << 16;
constexpr std::uint32_t kIncrement = 24;

class FrequencyModel {
 public:
  explicit FrequencyModel(std::size_t symbols) : freq_(symbols, 1), total_(static_cast<std::uint32_t>(symbols)) {}

  std::uint32_t total() const { return total_; }
  std::uint32_t freq(std::size_t s) const { return freq_[s]; }

  std::uint32_t cumulative(std::size_t s) const {
    std::uint32_t c = 0;
    for (std::size_t k = 0; k < s; ++k) c += freq_[k];
    return c;
  }

  /// Symbol whose interval contains `target`; writes its lower bound.
  std::size_t find(std::uint32_t target, std::uint32_t& cum) const {
    std::uint32_t c = 0;
    std::size_t s = 0;
    for (; s + 1 < freq_.size(); ++s) {
      if (target < c + freq_[s]) break;
      c += freq_[s];
    }
    cum = c;
    return s;
  }

  void update(std::size_t s) {
    freq_[s] += kIncrement;
    total_ += kIncrement;
    if (total_ > kMaxTotal) {
      total_ = 0;
      for (auto& f : freq_) {
        f = (f + 1) / 2;
        total_ += f;
      }
    }
  }

 private:
  std::vector<std::uint32_t> freq_;
  std::uint32_t total_;
};

class RangeEncoder {
 public:
  explicit RangeEncoder(std::vector<std::uint8_t>& out) : out_(out) {}

  void encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total) {
    const std::uint32_t r = range_ / total;
    low_ += static_cast<std::uint64_t>(r) * cum;
    range_ = r * freq;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  void code(FrequencyModel& m, std::size_t s) {
    encode(m.cumulative(s), m.freq(s), m.total());
    m.update(s);
  }

  void finish() {
    for (int i = 0; i < 5; ++i) shift_low();
  }

 private:
  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      std::uint8_t pending = cache_;
      do {
        out_.push_back(static_cast<std::uint8_t>(pending + carry));
        pending = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  std::vector<std::uint8_t>& out_;
  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> in) : in_(in) {
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
  }

  /// Value below `total` coded at even odds; total <= 2^16.
  std::uint32_t decode_uniform(std::uint32_t total) {
    const std::uint32_t r = range_ / total;
    const std::uint32_t v = std::min(code_ / r, total - 1);
    code_ -= r * v;
    range_ = r;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
    return v;
  }

  std::size_t decode(FrequencyModel& m) {
    const std::uint32_t r = range_ / m.total();
    const std::uint32_t target = std::min(code_ / r, m.total() - 1);
    std::uint32_t cum = 0;
    const std::size_t s = m.find(target, cum);
    code_ -= r * cum;
    range_ = r * m.freq(s);
    while (range_ < kTop) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
    m.update(s);
    return s;
  }

 private:
  // past the end reads zeros; corruption is caught by the stream checksum
  std::uint32_t next() { return pos_ < in_.size() ? in_[pos_++] : 0u; }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

/// One model for narrow alphabets; a high-byte model plus per-high-byte
/// low-byte models for wide ones.
class SymbolModel {
 public:
  explicit SymbolModel(int bits) : bits_(bits), head_(std::size_t{1} << (bits > 8 ? bits - 8 : bits)) {
    if (bits < 1 || bits > 16) throw InvalidArgument("symbol width must be 1..16 bits");
    if (bits > 8) low_.resize(head_.total());
  }

  void encode(RangeEncoder& enc, std::uint16_t s) {
    if (bits_ <= 8) return enc.code(head_, s);
    const std::size_t hi = s >> 8;
    enc.code(head_, hi);
    enc.code(low_model(hi), s & 0xFFu);
  }

  std::uint16_t decode(RangeDecoder& dec) {
    if (bits_ <= 8) return static_cast<std::uint16_t>(dec.decode(head_));
    const std::size_t hi = dec.decode(head_);
    return static_cast<std::uint16_t>((hi << 8) | dec.decode(low_model(hi)));
  }

 private:
  FrequencyModel& low_model(std::size_t hi) {
    if (!low_[hi]) low_[hi] = std::make_unique<FrequencyModel>(256);
    return *low_[hi];
  }

  int bits_;
  FrequencyModel head_;
  std::vector<std::unique_ptr<FrequencyModel>> low_;
};

}  // namespace

std::vector<std::uint8_t> entropy_encode(std::span<const std::uint16_t> symbols, int bits) {
  SymbolModel model(bits);
  const std::uint32_t limit = 1u << bits;
  std::vector<std::uint8_t> out;
  RangeEncoder enc(out);
  for (std::uint16_t s : symbols) {
    if (s >= limit) throw InvalidArgument("symbol exceeds the alphabet");
    model.encode(enc, s);
  }
  enc.finish();
  return out;
}

std::vector<std::uint16_t> entropy_decode(std::span<const std::uint8_t> bytes, std::size_t count, int bits) {
  SymbolModel model(bits);
  RangeDecoder dec(bytes);
  std::vector<std::uint16_t> out(count);
  for (auto& s : out) s = model.decode(dec);
  return out;
}

namespace {

int bit_length(std::uint32_t v) {
  int n = 0;
  for (; v; v >>= 1) ++n;
  return n;
}

std::vector<std::uint8_t> classes_encode(std::span<const std::uint16_t> symbols, int bits) {
  FrequencyModel classes(static_cast<std::size_t>(bits) + 1);
  std::vector<std::uint8_t> out;
  RangeEncoder enc(out);
  for (std::uint16_t s : symbols) {
    const int c = bit_length(s);
    enc.code(classes, static_cast<std::size_t>(c));
    if (c >= 2) enc.encode(s & ((1u << (c - 1)) - 1), 1, 1u << (c - 1));
  }
  enc.finish();
  return out;
}

std::vector<std::uint16_t> classes_decode(std::span<const std::uint8_t> bytes, std::size_t count, int bits) {
  FrequencyModel classes(static_cast<std::size_t>(bits) + 1);
  RangeDecoder dec(bytes);
  std::vector<std::uint16_t> out(count);
  for (auto& s : out) {
    const int c = static_cast<int>(dec.decode(classes));
    if (c == 0) s = 0;
    else if (c == 1) s = 1;
    else s = static_cast<std::uint16_t>((1u << (c - 1)) | dec.decode_uniform(1u << (c - 1)));
  }
  return out;
}

std::vector<std::uint8_t> pack_bits(std::span<const std::uint16_t> symbols, int bits) {
  std::vector<std::uint8_t> out((symbols.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
  std::size_t pos = 0;
  for (std::uint16_t s : symbols)
    for (int b = bits - 1; b >= 0; --b, ++pos)
      if ((s >> b) & 1u) out[pos / 8] |= static_cast<std::uint8_t>(0x80u >> (pos % 8));
  return out;
}

std::vector<std::uint16_t> unpack_bits(std::span<const std::uint8_t> bytes, std::size_t count, int bits) {
  if (bytes.size() * 8 < count * static_cast<std::size_t>(bits)) throw FormatError("packed channel is truncated");
  std::vector<std::uint16_t> out(count);
  std::size_t pos = 0;
  for (auto& s : out)
    for (int b = 0; b < bits; ++b, ++pos)
      s = static_cast<std::uint16_t>((s << 1) | ((bytes[pos / 8] >> (7 - pos % 8)) & 1u));
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_symbols(std::span<const std::uint16_t> symbols, int bits, SymbolCoder coder) {
  if (bits < 1 || bits > 16) throw InvalidArgument("symbol width must be 1..16 bits");
  for (std::uint16_t s : symbols)
    if (s >> bits) throw InvalidArgument("symbol exceeds the alphabet");
  switch (coder) {
    case SymbolCoder::Adaptive: return entropy_encode(symbols, bits);
    case SymbolCoder::Classes: return classes_encode(symbols, bits);
    case SymbolCoder::Packed: return pack_bits(symbols, bits);
  }
  throw InvalidArgument("unknown symbol coder");
}

std::vector<std::uint16_t> decode_symbols(std::span<const std::uint8_t> bytes, std::size_t count, int bits,
                                          SymbolCoder coder) {
  if (bits < 1 || bits > 16) throw InvalidArgument("symbol width must be 1..16 bits");
  switch (coder) {
    case SymbolCoder::Adaptive: return entropy_decode(bytes, count, bits);
    case SymbolCoder::Classes: return classes_decode(bytes, count, bits);
    case SymbolCoder::Packed: return unpack_bits(bytes, count, bits);
  }
  throw FormatError("unknown symbol coder");
}

std::uint16_t fold_residual(std::uint16_t r, int bits) {
  const std::int32_t half = 1 << (bits - 1);
  const std::int32_t s = r < half ? r : static_cast<std::int32_t>(r) - (1 << bits);
  return static_cast<std::uint16_t>(s >= 0 ? 2 * s : -2 * s - 1);
}

std::uint16_t unfold_residual(std::uint16_t z, int bits) {
  const std::int32_t s = (z & 1) ? -(static_cast<std::int32_t>(z) + 1) / 2 : z / 2;
  return static_cast<std::uint16_t>(s & ((1 << bits) - 1));
}

namespace {

std::vector<std::uint16_t> folded(std::vector<std::uint16_t> residuals, int bits) {
  for (auto& r : residuals) r = fold_residual(r, bits);
  return residuals;
}

std::vector<std::uint16_t> unfolded(std::vector<std::uint16_t> z, int bits) {
  for (auto& r : z) r = unfold_residual(r, bits);
  return z;
}

}  // namespace

std::size_t coded_channel_size(std::span<const std::uint16_t> codes, int bits) {
  return entropy_encode(folded(predictive_encode(codes, bits), bits), bits).size();
}

// ---------------------------------------------------------------------------
// Dynamic-branch stages
// ---------------------------------------------------------------------------

std::vector<std::size_t> select_dynamic_outliers(std::span<const float> values, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw InvalidArgument("outlier fraction must be in [0, 1)");
  const std::size_t n = values.size();
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  if (k == 0) return {};
  std::vector<float> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (static_cast<double>(sorted[n / 2 - 1]) + sorted[n / 2]);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto dev = [&](std::size_t i) { return std::abs(static_cast<double>(values[i]) - median); };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dev(a) > dev(b); });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::size_t plane_side(std::size_t n) {
  auto s = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (s * s < n) ++s;
  while (s > 0 && (s - 1) * (s - 1) >= n) --s;
  return s;
}

std::vector<std::uint16_t> to_plane(std::span<const std::uint16_t> codes, std::size_t side) {
  if (codes.size() > side * side) throw InvalidArgument("plane too small for the channel");
  std::vector<std::uint16_t> plane(side * side, 0);
  std::copy(codes.begin(), codes.end(), plane.begin());
  return plane;
}

std::vector<std::uint16_t> plane_predict_encode(std::span<const std::uint16_t> plane, std::size_t side,
                                                int bits) {
  if (plane.size() != side * side) throw InvalidArgument("plane size does not match its side");
  const std::uint32_t mask = (1u << bits) - 1u;
  std::vector<std::uint16_t> r(plane.size());
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t i = y * side + x;
      const std::uint32_t pred = x > 0 ? plane[i - 1] : (y > 0 ? plane[i - side] : 0u);
      r[i] = static_cast<std::uint16_t>((plane[i] - pred) & mask);
    }
  return r;
}

std::vector<std::uint16_t> plane_predict_decode(std::span<const std::uint16_t> residuals, std::size_t side,
                                                int bits) {
  if (residuals.size() != side * side) throw InvalidArgument("plane size does not match its side");
  const std::uint32_t mask = (1u << bits) - 1u;
  std::vector<std::uint16_t> p(residuals.size());
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t i = y * side + x;
      const std::uint32_t pred = x > 0 ? p[i - 1] : (y > 0 ? p[i - side] : 0u);
      p[i] = static_cast<std::uint16_t>((pred + residuals[i]) & mask);
    }
  return p;
}

ExternalVideoCodec ExternalVideoCodec::h264() {
  return {"ffmpeg -loglevel error -y -i {in} -c:v libx264 -preset medium -qp 20 -pix_fmt yuv444p "
          "-bf 0 -refs 3 {out}",
          "ffmpeg -loglevel error -y -i {in} -pix_fmt {pix_fmt} {out}"};
}

// ---------------------------------------------------------------------------
// Record layout
// ---------------------------------------------------------------------------

std::vector<ChannelInfo> codec_channels(Kind kind, int keyframes, int sh_degree) {
  std::vector<ChannelInfo> ch;
  const char* xyz[] = {"x", "y", "z"};
  const char* wxyz[] = {"w", "x", "y", "z"};
  for (auto a : xyz) ch.push_back({std::string("position.") + a, 16});
  for (auto a : wxyz) ch.push_back({std::string("rotation.") + a, 8});
  for (auto a : xyz) ch.push_back({std::string("log_scale.") + a, 8});
  ch.push_back({"opacity", 8});
  for (std::size_t k = 0; k < color_coeff_count(sh_degree); ++k) ch.push_back({"color[" + std::to_string(k) + "]", 8});
  ch.push_back({"importance", 8});
  ch.push_back({"gate", 8});
  if (kind == Kind::Static) {
    for (auto a : xyz) ch.push_back({std::string("translation.") + a, 16});
    return ch;
  }
  for (int k = 0; k < keyframes; ++k)
    for (auto a : xyz) ch.push_back({"traj_position[" + std::to_string(k) + "]." + a, 16});
  for (int k = 0; k < keyframes; ++k)
    for (auto a : wxyz) ch.push_back({"traj_rotation[" + std::to_string(k) + "]." + a, 8});
  ch.push_back({"window_start", 8});
  ch.push_back({"window_end", 8});
  ch.push_back({"window_sharpness", 8});
  return ch;
}

std::vector<float> codec_record(const GaussianSet& set, std::size_t i) {
  const auto& c = set.core(i);
  std::vector<float> r{c.position.x, c.position.y, c.position.z, c.rotation.w, c.rotation.x, c.rotation.y,
                       c.rotation.z, c.log_scale.x, c.log_scale.y, c.log_scale.z, c.opacity_logit};
  for (std::size_t k = 0; k < color_coeff_count(set.sh_degree()); ++k) r.push_back(c.color[k]);
  r.push_back(c.importance_raw);
  r.push_back(c.gate_activation);
  if (!set.is_dynamic(i)) {
    const auto& t = set.static_extras(i).translation;
    r.insert(r.end(), {t.x, t.y, t.z});
    return r;
  }
  const auto& d = set.dynamic_extras(i);
  for (const auto& p : d.traj_position) r.insert(r.end(), {p.x, p.y, p.z});
  for (const auto& q : d.traj_rotation) r.insert(r.end(), {q.w, q.x, q.y, q.z});
  r.insert(r.end(), {d.window_start, d.window_end, d.window_sharpness});
  return r;
}

namespace {

GaussianCore core_from_record(std::span<const float> r, int sh_degree, std::size_t& k) {
  GaussianCore c;
  c.position = {r[0], r[1], r[2]};
  c.rotation = {r[3], r[4], r[5], r[6]};
  c.log_scale = {r[7], r[8], r[9]};
  c.opacity_logit = r[10];
  k = 11;
  for (std::size_t j = 0; j < color_coeff_count(sh_degree); ++j) c.color[j] = r[k++];
  c.importance_raw = r[k++];
  c.gate_activation = r[k++];
  return c;
}

StaticExtras static_from_record(std::span<const float> r, std::size_t k) {
  return {Vec3f{r[k], r[k + 1], r[k + 2]}};
}

DynamicExtras dynamic_from_record(std::span<const float> r, std::size_t k, int keyframes) {
  DynamicExtras d;
  for (int j = 0; j < keyframes; ++j, k += 3) d.traj_position.push_back({r[k], r[k + 1], r[k + 2]});
  for (int j = 0; j < keyframes; ++j, k += 4) d.traj_rotation.push_back({r[k], r[k + 1], r[k + 2], r[k + 3]});
  d.window_start = r[k];
  d.window_end = r[k + 1];
  d.window_sharpness = r[k + 2];
  return d;
}

struct Ordering {
  std::vector<std::size_t> statics;  ///< foreground (KD order) then background
  std::size_t n_background = 0;
  std::vector<std::size_t> dynamics;
};

Ordering make_ordering(const GaussianSet& set) {
  Ordering o;
  const auto statics = set.indices_of(Kind::Static);
  std::vector<Vec3f> pos;
  for (std::size_t i : statics) pos.push_back(set.core(i).position);
  std::vector<std::size_t> fg(statics.size()), bg;
  std::iota(fg.begin(), fg.end(), std::size_t{0});
  if (statics.size() >= 2) {
    auto split = split_static_outliers(pos);
    fg = std::move(split.foreground);
    bg = std::move(split.background);
  }
  std::vector<Vec3f> fg_pos;
  for (std::size_t j : fg) fg_pos.push_back(pos[j]);
  for (std::size_t k : kd_reorder(fg_pos)) o.statics.push_back(statics[fg[k]]);
  for (std::size_t j : bg) o.statics.push_back(statics[j]);
  o.n_background = bg.size();

  const auto dynamics = set.indices_of(Kind::Dynamic);
  std::vector<Vec3f> means;
  for (std::size_t i : dynamics) means.push_back(trajectory_mean(set.dynamic_extras(i)).cast<float>());
  for (std::size_t k : kd_reorder(means)) o.dynamics.push_back(dynamics[k]);
  return o;
}

/// Column `c` of a table of records.
std::vector<float> column(const std::vector<std::vector<float>>& records, std::size_t begin, std::size_t end,
                          std::size_t c) {
  std::vector<float> out;
  out.reserve(end - begin);
  for (std::size_t r = begin; r < end; ++r) out.push_back(records[r][c]);
  return out;
}

void check_finite(const std::vector<std::vector<float>>& records) {
  for (const auto& r : records)
    for (float v : r)
      if (!std::isfinite(v)) throw NumericError("cannot compress a non-finite attribute");
}

// --- external adapter -------------------------------------------------------

std::string substitute(std::string cmd, const std::string& key, const std::string& value) {
  for (std::size_t p = cmd.find(key); p != std::string::npos; p = cmd.find(key, p + value.size()))
    cmd.replace(p, key.size(), value);
  return cmd;
}

std::filesystem::path scratch_dir() {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("bsplat_ext_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

void write_pgm(const std::filesystem::path& path, std::span<const std::uint16_t> plane, std::size_t side, int bits) {
  std::ostringstream head;
  head << "P5\n" << side << " " << side << "\n" << ((1 << bits) - 1) << "\n";
  const std::string h = head.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  for (std::uint16_t v : plane) {
    if (bits > 8) bytes.push_back(static_cast<std::uint8_t>(v >> 8));
    bytes.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  write_file(path.string(), bytes);
}

std::vector<std::uint16_t> read_pgm(const std::filesystem::path& path, std::size_t side, int bits) {
  const auto bytes = read_file(path.string());
  std::size_t pos = 0;
  auto token = [&] {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw FormatError("external decoder did not produce a binary PGM");
  const std::string w = token(), h = token(), maxval = token();
  ++pos;
  if (w != std::to_string(side) || h != std::to_string(side) || maxval != std::to_string((1 << bits) - 1))
    throw FormatError("external decoder returned a plane of the wrong shape or depth");
  const std::size_t width = bits > 8 ? 2 : 1;
  if (bytes.size() < pos + side * side * width) throw FormatError("external decoder output is truncated");
  std::vector<std::uint16_t> plane(side * side);
  for (std::size_t i = 0; i < plane.size(); ++i)
    plane[i] = width == 2 ? static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1])
                          : bytes[pos + i];
  return plane;
}

std::string fill_command(const std::string& tmpl, const std::filesystem::path& in, const std::filesystem::path& out,
                         std::size_t side, int bits) {
  std::string cmd = substitute(tmpl, "{in}", in.string());
  cmd = substitute(cmd, "{out}", out.string());
  cmd = substitute(cmd, "{width}", std::to_string(side));
  cmd = substitute(cmd, "{height}", std::to_string(side));
  cmd = substitute(cmd, "{bits}", std::to_string(bits));
  return substitute(cmd, "{pix_fmt}", bits > 8 ? "gray16be" : "gray");
}

void run(const std::string& cmd) {
  if (std::system(cmd.c_str()) != 0) throw IoError("external video command failed: " + cmd);
}

std::vector<std::uint8_t> external_encode(const ExternalVideoCodec& ext, std::span<const std::uint16_t> plane,
                                          std::size_t side, int bits) {
  const auto dir = scratch_dir();
  const auto in = dir / "plane.pgm", out = dir / "plane.bin";
  write_pgm(in, plane, side, bits);
  run(fill_command(ext.encode_command, in, out, side, bits));
  auto bytes = read_file(out.string());
  std::filesystem::remove_all(dir);
  return bytes;
}

std::vector<std::uint16_t> external_decode(const ExternalVideoCodec& ext, std::span<const std::uint8_t> blob,
                                           std::size_t side, int bits) {
  const auto dir = scratch_dir();
  const auto in = dir / "plane.bin", out = dir / "plane.pgm";
  write_file(in.string(), blob);
  run(fill_command(ext.decode_command, in, out, side, bits));
  auto plane = read_pgm(out, side, bits);
  std::filesystem::remove_all(dir);
  return plane;
}

// --- channel coding ---------------------------------------------------------

struct CodedChannel {
  ChannelMode mode = ChannelMode::Direct;
  SymbolCoder coder = SymbolCoder::Adaptive;
  std::vector<std::uint8_t> bytes;
};

constexpr SymbolCoder kCoders[] = {SymbolCoder::Adaptive, SymbolCoder::Classes, SymbolCoder::Packed};

/// Smallest coding of `direct` as is or of `residuals`, over every coder.
/// Packed residuals cost the same as packed codes, so they are skipped.
CodedChannel smallest(std::span<const std::uint16_t> direct, std::span<const std::uint16_t> residuals, int bits,
                      ChannelMode residual_mode) {
  CodedChannel best;
  bool have = false;
  auto consider = [&](ChannelMode mode, SymbolCoder coder, std::span<const std::uint16_t> symbols) {
    auto bytes = encode_symbols(symbols, bits, coder);
    if (!have || bytes.size() < best.bytes.size()) best = {mode, coder, std::move(bytes)};
    have = true;
  };
  for (SymbolCoder c : kCoders) consider(ChannelMode::Direct, c, direct);
  for (SymbolCoder c : kCoders)
    if (c != SymbolCoder::Packed) consider(residual_mode, c, residuals);
  return best;
}

/// Direct or delta coding, whichever is smaller.
CodedChannel code_sequence(std::span<const std::uint16_t> codes, int bits) {
  return smallest(codes, folded(predictive_encode(codes, bits), bits), bits, ChannelMode::Predictive);
}

std::vector<std::uint16_t> decode_sequence(const ChannelHeader& h, std::span<const std::uint8_t> bytes, std::size_t n) {
  const int bits = h.quant.bits;
  auto symbols = decode_symbols(bytes, n, bits, h.coder);
  if (h.mode == ChannelMode::Direct) return symbols;
  if (h.mode == ChannelMode::Predictive) return predictive_decode(unfolded(std::move(symbols), bits), bits);
  throw FormatError("invalid channel mode for a sequence");
}

CodedChannel code_plane(std::span<const std::uint16_t> plane, std::size_t side, int bits,
                        const std::optional<ExternalVideoCodec>& ext) {
  if (ext) return {ChannelMode::External, SymbolCoder::Adaptive, external_encode(*ext, plane, side, bits)};
  return smallest(plane, folded(plane_predict_encode(plane, side, bits), bits), bits, ChannelMode::Predictive);
}

std::vector<std::uint16_t> decode_plane(const ChannelHeader& h, std::span<const std::uint8_t> bytes, std::size_t side,
                                        const std::optional<ExternalVideoCodec>& ext) {
  const int bits = h.quant.bits;
  if (h.mode == ChannelMode::External) {
    if (!ext) throw InvalidArgument("stream holds externally coded planes; a decoder command is required");
    return external_decode(*ext, bytes, side, bits);
  }
  auto symbols = decode_symbols(bytes, side * side, bits, h.coder);
  if (h.mode == ChannelMode::Direct) return symbols;
  if (h.mode == ChannelMode::Predictive) return plane_predict_decode(unfolded(std::move(symbols), bits), side, bits);
  throw FormatError("invalid channel mode for a plane");
}

// --- stream container -------------------------------------------------------

constexpr std::size_t kSections = 5;

std::uint32_t checksum(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(crc32_z(0L, bytes.data(), bytes.size()));
}

void put_channel_header(ByteWriter& w, const ChannelHeader& h, bool dynamic) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.quant.bits));
  w.put<std::uint8_t>(static_cast<std::uint8_t>((h.quant.constant() ? 1 : 0) | (static_cast<int>(h.mode) << 1) |
                                               (static_cast<int>(h.coder) << 3)));
  w.put<float>(h.quant.lo);
  w.put<float>(h.quant.hi);
  if (dynamic) w.put_varint(h.outliers);
}

ChannelHeader get_channel_header(ByteReader& r, const ChannelInfo& info, bool dynamic) {
  ChannelHeader h;
  h.info = info;
  h.quant.bits = r.get<std::uint8_t>();
  const auto flags = r.get<std::uint8_t>();
  h.quant.lo = r.get<float>();
  h.quant.hi = r.get<float>();
  if (dynamic) h.outliers = r.get_varint();
  if (h.quant.bits != info.bits) throw FormatError("channel bit depth disagrees with the layout: " + info.name);
  if (!std::isfinite(h.quant.lo) || !std::isfinite(h.quant.hi) || h.quant.hi < h.quant.lo)
    throw FormatError("channel range is invalid: " + info.name);
  const bool constant = flags & 1;
  if (constant != h.quant.constant()) throw FormatError("constant flag disagrees with range: " + info.name);
  const int mode = (flags >> 1) & 3;
  const int coder = flags >> 3;
  if (mode > 2) throw FormatError("unknown channel mode: " + info.name);
  if (coder > 2) throw FormatError("unknown symbol coder: " + info.name);
  h.mode = static_cast<ChannelMode>(mode);
  h.coder = static_cast<SymbolCoder>(coder);
  return h;
}

struct Parsed {
  StreamInfo info;
  std::array<std::span<const std::uint8_t>, kSections> sections;
};

Parsed parse(std::span<const std::uint8_t> stream) {
  if (stream.size() < 8) throw FormatError("stream is truncated");
  ByteReader r(stream);
  r.expect_tag("CDGC");
  const auto version = r.get<std::uint32_t>();
  if (version != kStreamVersion) throw FormatError("unsupported stream version " + std::to_string(version));
  const auto body = stream.first(stream.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, stream.data() + stream.size() - 4, 4);
  if (checksum(body) != stored) throw FormatError("stream checksum mismatch");

  Parsed p;
  auto& s = p.info;
  s.total_bytes = stream.size();
  s.n = r.get<std::uint64_t>();
  s.n_static = r.get<std::uint64_t>();
  s.n_dynamic = r.get<std::uint64_t>();
  s.n_background = r.get<std::uint64_t>();
  const auto keyframes = r.get<std::uint32_t>();
  const auto sh = r.get<std::uint32_t>();
  s.plane_side = r.get<std::uint32_t>();
  const auto ns_ch = r.get<std::uint32_t>();
  const auto nd_ch = r.get<std::uint32_t>();
  if (s.n_static + s.n_dynamic != s.n || s.n_background > s.n_static || s.n > stream.size() * 8)
    throw FormatError("stream counts are inconsistent");
  if (keyframes < 2 || keyframes > 64 || sh > 1) throw FormatError("stream header out of range");
  if (s.plane_side != plane_side(s.n_dynamic)) throw FormatError("plane side disagrees with the dynamic count");
  s.keyframes = static_cast<int>(keyframes);
  s.sh_degree = static_cast<int>(sh);
  const auto st_layout = codec_channels(Kind::Static, s.keyframes, s.sh_degree);
  const auto dy_layout = codec_channels(Kind::Dynamic, s.keyframes, s.sh_degree);
  if (ns_ch != st_layout.size() || nd_ch != dy_layout.size()) throw FormatError("channel counts disagree with the layout");
  for (const auto& c : st_layout) s.static_channels.push_back(get_channel_header(r, c, false));
  for (const auto& c : dy_layout) {
    s.dynamic_channels.push_back(get_channel_header(r, c, true));
    if (s.dynamic_channels.back().outliers > s.n_dynamic) throw FormatError("outlier count exceeds the dynamic count");
  }
  std::array<std::uint64_t, kSections + 1> off{};
  for (auto& o : off) o = r.get<std::uint64_t>();
  if (off[0] != r.position()) throw FormatError("first section does not follow the header");
  for (std::size_t k = 0; k < kSections; ++k)
    if (off[k + 1] < off[k]) throw FormatError("section offsets are not monotone");
  if (off[kSections] != body.size()) throw FormatError("section table does not cover the stream");
  for (std::size_t k = 0; k < kSections; ++k) {
    p.sections[k] = body.subspan(off[k], off[k + 1] - off[k]);
    s.section_bytes[k] = off[k + 1] - off[k];
  }
  return p;
}

/// Length-prefixed blobs, one per non-constant channel.
std::vector<std::span<const std::uint8_t>> split_blobs(std::span<const std::uint8_t> section,
                                                       const std::vector<ChannelHeader>& channels,
                                                       bool present) {
  std::vector<std::span<const std::uint8_t>> blobs(channels.size());
  ByteReader r(section);
  if (present)
    for (std::size_t c = 0; c < channels.size(); ++c) {
      if (channels[c].quant.constant()) continue;
      const auto len = r.get_varint();
      blobs[c] = r.get_bytes(len);
    }
  if (r.remaining() != 0) throw FormatError("trailing bytes in a coded section");
  return blobs;
}

}  // namespace

std::vector<std::size_t> codec_order(const GaussianSet& set, const CodecOptions&) {
  const Ordering o = make_ordering(set);
  std::vector<std::size_t> order(set.size());
  std::size_t si = 0, di = 0;
  for (std::size_t i = 0; i < set.size(); ++i) order[i] = set.is_dynamic(i) ? o.dynamics[di++] : o.statics[si++];
  return order;
}

std::vector<std::uint8_t> compress(const GaussianSet& set, const CodecOptions& options) {
  const Ordering o = make_ordering(set);
  const int K = set.keyframes(), sh = set.sh_degree();
  const auto st_layout = codec_channels(Kind::Static, K, sh);
  const auto dy_layout = codec_channels(Kind::Dynamic, K, sh);

  std::vector<std::vector<float>> st_rec, dy_rec;
  for (std::size_t i : o.statics) st_rec.push_back(codec_record(set, i));
  for (std::size_t i : o.dynamics) dy_rec.push_back(codec_record(set, i));
  check_finite(st_rec);
  check_finite(dy_rec);
  const std::size_t n_fg = st_rec.size() - o.n_background;
  const std::size_t nd = dy_rec.size();
  const std::size_t side = plane_side(nd);

  // static foreground channels
  std::vector<ChannelHeader> st_head(st_layout.size());
  std::vector<CodedChannel> st_coded(st_layout.size());
  parallel_for(st_layout.size(), [&](std::size_t c) {
    const auto values = column(st_rec, 0, n_fg, c);
    auto& h = st_head[c];
    h.info = st_layout[c];
    h.quant = ChannelQuant::fit(values, h.info.bits);
    if (h.quant.constant()) return;
    st_coded[c] = code_sequence(quantize(values, h.quant), h.info.bits);
    h.mode = st_coded[c].mode;
    h.coder = st_coded[c].coder;
  });

  // dynamic channels: raw outliers, the rest as planes
  std::vector<ChannelHeader> dy_head(dy_layout.size());
  std::vector<std::vector<std::size_t>> dy_out(dy_layout.size());
  std::vector<std::vector<float>> dy_out_values(dy_layout.size());
  std::vector<CodedChannel> dy_coded(dy_layout.size());
  auto encode_dynamic = [&](std::size_t c) {
    const auto values = column(dy_rec, 0, nd, c);
    auto& h = dy_head[c];
    h.info = dy_layout[c];
    dy_out[c] = select_dynamic_outliers(values, options.dynamic_outlier_fraction);
    h.outliers = static_cast<std::uint32_t>(dy_out[c].size());
    std::vector<bool> is_out(nd, false);
    for (std::size_t j : dy_out[c]) {
      is_out[j] = true;
      dy_out_values[c].push_back(values[j]);
    }
    std::vector<float> inliers;
    for (std::size_t j = 0; j < nd; ++j)
      if (!is_out[j]) inliers.push_back(values[j]);
    h.quant = ChannelQuant::fit(inliers, h.info.bits);
    if (h.quant.constant()) return;
    auto codes = quantize(values, h.quant);
    // outlier slots repeat their predecessor so they cost a zero residual
    for (std::size_t j = 0; j < nd; ++j)
      if (is_out[j]) codes[j] = j > 0 ? codes[j - 1] : 0;
    dy_coded[c] = code_plane(to_plane(codes, side), side, h.info.bits, options.external);
    h.mode = dy_coded[c].mode;
    h.coder = dy_coded[c].coder;
  };
  // external commands share scratch naming, so they run one at a time
  if (options.external)
    for (std::size_t c = 0; c < dy_layout.size(); ++c) encode_dynamic(c);
  else
    parallel_for(dy_layout.size(), encode_dynamic);

  ByteWriter w;
  w.put_tag("CDGC");
  w.put<std::uint32_t>(kStreamVersion);
  w.put<std::uint64_t>(set.size());
  w.put<std::uint64_t>(set.n_static());
  w.put<std::uint64_t>(set.n_dynamic());
  w.put<std::uint64_t>(o.n_background);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(K));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sh));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(side));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(st_layout.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dy_layout.size()));
  for (const auto& h : st_head) put_channel_header(w, h, false);
  for (const auto& h : dy_head) put_channel_header(w, h, true);
  const std::size_t table = w.size();
  for (std::size_t k = 0; k <= kSections; ++k) w.put<std::uint64_t>(0);
  std::array<std::uint64_t, kSections + 1> off{};

  off[0] = w.size();
  std::vector<std::uint16_t> kinds(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) kinds[i] = set.is_dynamic(i) ? 1 : 0;
  if (!kinds.empty()) w.put_bytes(entropy_encode(kinds, 1));

  off[1] = w.size();
  for (std::size_t r = n_fg; r < st_rec.size(); ++r)
    for (float v : st_rec[r]) w.put<float>(v);

  off[2] = w.size();
  if (n_fg > 0)
    for (std::size_t c = 0; c < st_layout.size(); ++c) {
      if (st_head[c].quant.constant()) continue;
      w.put_varint(static_cast<std::uint32_t>(st_coded[c].bytes.size()));
      w.put_bytes(st_coded[c].bytes);
    }

  off[3] = w.size();
  for (std::size_t c = 0; c < dy_layout.size(); ++c) {
    for (std::size_t j : dy_out[c]) w.put_varint(static_cast<std::uint32_t>(j));
    for (float v : dy_out_values[c]) w.put<float>(v);
  }

  off[4] = w.size();
  if (nd > 0)
    for (std::size_t c = 0; c < dy_layout.size(); ++c) {
      if (dy_head[c].quant.constant()) continue;
      w.put_varint(static_cast<std::uint32_t>(dy_coded[c].bytes.size()));
      w.put_bytes(dy_coded[c].bytes);
    }
  off[5] = w.size();
  for (std::size_t k = 0; k <= kSections; ++k) w.patch(table + 8 * k, off[k]);
  w.put<std::uint32_t>(checksum(w.bytes()));
  return w.take();
}

StreamInfo inspect_stream(std::span<const std::uint8_t> stream) { return parse(stream).info; }

GaussianSet decompress(std::span<const std::uint8_t> stream, const CodecOptions& options) {
  const Parsed p = parse(stream);
  const auto& s = p.info;
  const int K = s.keyframes, sh = s.sh_degree;
  const std::size_t n_fg = s.n_static - s.n_background;
  const std::size_t nd = s.n_dynamic;
  const std::size_t side = s.plane_side;

  const auto kinds = s.n > 0 ? entropy_decode(p.sections[0], s.n, 1) : std::vector<std::uint16_t>{};
  if (static_cast<std::uint64_t>(std::count(kinds.begin(), kinds.end(), 1)) != nd)
    throw FormatError("kind tags disagree with the dynamic count");

  const std::size_t st_width = s.static_channels.size();
  const std::size_t dy_width = s.dynamic_channels.size();
  std::vector<std::vector<float>> st_rec(s.n_static, std::vector<float>(st_width));
  std::vector<std::vector<float>> dy_rec(nd, std::vector<float>(dy_width));

  {
    ByteReader r(p.sections[1]);
    for (std::size_t row = n_fg; row < s.n_static; ++row)
      for (auto& v : st_rec[row]) v = r.get<float>();
    if (r.remaining() != 0) throw FormatError("trailing bytes in the static outlier section");
  }

  const auto st_blobs = split_blobs(p.sections[2], s.static_channels, n_fg > 0);
  std::vector<std::exception_ptr> errors(std::max(st_width, dy_width));
  auto rethrow_first = [&] {
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  };
  parallel_for(st_width, [&](std::size_t c) {
    try {
      const auto& h = s.static_channels[c];
      std::vector<float> values;
      if (h.quant.constant())
        values.assign(n_fg, h.quant.lo);
      else
        values = dequantize(decode_sequence(h, st_blobs[c], n_fg), h.quant);
      for (std::size_t row = 0; row < n_fg; ++row) st_rec[row][c] = values[row];
    } catch (...) {
      errors[c] = std::current_exception();
    }
  });
  rethrow_first();

  ByteReader outl(p.sections[3]);
  std::vector<std::vector<std::uint32_t>> out_idx(dy_width);
  std::vector<std::vector<float>> out_val(dy_width);
  for (std::size_t c = 0; c < dy_width; ++c) {
    for (std::uint32_t k = 0; k < s.dynamic_channels[c].outliers; ++k) {
      out_idx[c].push_back(outl.get_varint());
      if (out_idx[c].back() >= nd) throw FormatError("dynamic outlier index out of range");
    }
    for (std::uint32_t k = 0; k < s.dynamic_channels[c].outliers; ++k) out_val[c].push_back(outl.get<float>());
  }
  if (outl.remaining() != 0) throw FormatError("trailing bytes in the dynamic outlier section");

  const auto dy_blobs = split_blobs(p.sections[4], s.dynamic_channels, nd > 0);
  auto decode_dynamic = [&](std::size_t c) {
    const auto& h = s.dynamic_channels[c];
    std::vector<float> values;
    if (h.quant.constant()) {
      values.assign(nd, h.quant.lo);
    } else {
      auto plane = decode_plane(h, dy_blobs[c], side, options.external);
      plane.resize(nd);  // drop padding
      values = dequantize(plane, h.quant);
    }
    for (std::size_t k = 0; k < out_idx[c].size(); ++k) values[out_idx[c][k]] = out_val[c][k];
    for (std::size_t row = 0; row < nd; ++row) dy_rec[row][c] = values[row];
  };
  if (options.external) {
    for (std::size_t c = 0; c < dy_width; ++c) decode_dynamic(c);
  } else {
    parallel_for(dy_width, [&](std::size_t c) {
      try {
        decode_dynamic(c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
    rethrow_first();
  }

  GaussianSet set(K, sh);
  std::size_t si = 0, di = 0;
  for (std::size_t i = 0; i < s.n; ++i) {
    std::size_t k = 0;
    if (kinds[i] == 0) {
      const auto& r = st_rec[si++];
      const auto core = core_from_record(r, sh, k);
      set.add_static(core, static_from_record(r, k));
    } else {
      const auto& r = dy_rec[di++];
      const auto core = core_from_record(r, sh, k);
      set.add_dynamic(core, dynamic_from_record(r, k, K));
    }
  }
  return set;
}

}  // namespace bsplat
