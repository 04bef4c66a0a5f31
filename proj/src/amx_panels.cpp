// bf16 tile-matrix similarity panels. Only the functions carrying the target
// attribute use AMX/AVX-512 instructions; they run after a runtime check.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <vector>

#include "vpr/matching.hpp"

#if defined(VPR_HAVE_AMX) && defined(__x86_64__) && defined(__linux__)
#include <cpuid.h>
#include <immintrin.h>
#include <sys/syscall.h>
#include <unistd.h>
#define VPR_AMX_BUILD 1
#endif

namespace vpr {

#ifdef VPR_AMX_BUILD
namespace {

constexpr int kArchReqXcompPerm = 0x1023;
constexpr int kXfeatureXtiledata = 18;
constexpr std::size_t kTile = 16;     // rows per tile, f32 columns per tile
constexpr std::size_t kBlock = 32;    // rows/columns per 2x2 tile block
constexpr std::size_t kPairs = 16;    // bf16 pairs per tile row

bool detect_amx() {
  unsigned a = 0, b = 0, c = 0, d = 0;
  if (!__get_cpuid_count(7, 0, &a, &b, &c, &d)) return false;
  const bool tile = (d >> 24) & 1u;
  const bool bf16 = (d >> 22) & 1u;
  if (!tile || !bf16) return false;
  if (!__get_cpuid(1, &a, &b, &c, &d) || !((c >> 27) & 1u)) return false;  // OSXSAVE
  std::uint32_t lo = 0, hi = 0;
  __asm__ volatile("xgetbv" : "=a"(lo), "=d"(hi) : "c"(0));
  const std::uint64_t xcr0 = (static_cast<std::uint64_t>(hi) << 32) | lo;
  if (((xcr0 >> 17) & 3u) != 3u) return false;
  return syscall(SYS_arch_prctl, kArchReqXcompPerm, kXfeatureXtiledata) == 0;
}

// Round-to-nearest-even f32 -> bf16. Inputs are finite.
std::uint16_t to_bf16(float x) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &x, sizeof bits);
  bits += 0x7fffu + ((bits >> 16) & 1u);
  return static_cast<std::uint16_t>(bits >> 16);
}

struct alignas(64) TileConfig {
  std::uint8_t palette = 1;
  std::uint8_t start_row = 0;
  std::uint8_t reserved[14] = {};
  std::uint16_t colsb[16] = {};
  std::uint8_t rows[16] = {};
};

__attribute__((target("amx-tile,amx-bf16,avx512f"))) void amx_block_panel(
    const std::uint16_t* a, std::size_t a_stride_bytes, const std::uint16_t* b_blocks, std::size_t b_block_elems,
    std::size_t chunks, std::size_t col_blocks, float* out, std::size_t out_stride_bytes) {
  TileConfig cfg;
  for (int t = 0; t < 8; ++t) {
    cfg.colsb[t] = 64;
    cfg.rows[t] = 16;
  }
  _tile_loadconfig(&cfg);
  const auto* a_bytes = reinterpret_cast<const char*>(a);
  for (std::size_t jb = 0; jb < col_blocks; ++jb) {
    const std::uint16_t* b0 = b_blocks + (2 * jb) * b_block_elems;
    const std::uint16_t* b1 = b0 + b_block_elems;
    _tile_zero(0);
    _tile_zero(1);
    _tile_zero(2);
    _tile_zero(3);
    for (std::size_t k = 0; k < chunks; ++k) {
      _tile_loadd(4, a_bytes + k * 64, a_stride_bytes);
      _tile_loadd(5, a_bytes + kTile * a_stride_bytes + k * 64, a_stride_bytes);
      _tile_loadd(6, b0 + k * kPairs * kTile * 2, 64);
      _tile_loadd(7, b1 + k * kPairs * kTile * 2, 64);
      _tile_dpbf16ps(0, 4, 6);
      _tile_dpbf16ps(1, 4, 7);
      _tile_dpbf16ps(2, 5, 6);
      _tile_dpbf16ps(3, 5, 7);
    }
    auto* o = reinterpret_cast<char*>(out) + jb * kBlock * sizeof(float);
    _tile_stored(0, o, out_stride_bytes);
    _tile_stored(1, o + kTile * sizeof(float), out_stride_bytes);
    _tile_stored(2, o + kTile * out_stride_bytes, out_stride_bytes);
    _tile_stored(3, o + kTile * out_stride_bytes + kTile * sizeof(float), out_stride_bytes);
  }
  _tile_release();
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

class AmxPanels final : public detail::SimilarityPanels {
 public:
  AmxPanels(const Array2f& q, const Array2f& c)
      : dim_pad_(round_up(q.cols, 32)), rows_pad_(round_up(q.rows, kBlock)), cols_pad_(round_up(c.rows, kBlock)) {
    a_.assign(rows_pad_ * dim_pad_, 0);
    double qn = 0.0, cn = 0.0;
    for (std::size_t r = 0; r < q.rows; ++r) {
      double n = 0.0;
      for (std::size_t k = 0; k < q.cols; ++k) {
        a_[r * dim_pad_ + k] = to_bf16(q(r, k));
        n += static_cast<double>(q(r, k)) * q(r, k);
      }
      qn = std::max(qn, n);
    }
    // B: per 16-column block, [pair][column][2].
    const std::size_t pairs = dim_pad_ / 2;
    block_elems_ = pairs * kTile * 2;
    b_.assign((cols_pad_ / kTile) * block_elems_, 0);
    for (std::size_t j = 0; j < c.rows; ++j) {
      std::uint16_t* blk = b_.data() + (j / kTile) * block_elems_;
      double n = 0.0;
      for (std::size_t k = 0; k < c.cols; ++k) {
        blk[(k / 2) * kTile * 2 + (j % kTile) * 2 + (k % 2)] = to_bf16(c(j, k));
        n += static_cast<double>(c(j, k)) * c(j, k);
      }
      cn = std::max(cn, n);
    }
    // Rounding both factors to bf16 perturbs each product by at most
    // (2u + u^2)|q_k c_k| with u = 2^-8; fp32 accumulation adds gamma_d.
    const double u = std::ldexp(1.0, -8);
    const double d = static_cast<double>(dim_pad_);
    const double ua = std::ldexp(1.0, -24);
    const double gamma = 2.0 * d * ua / (1.0 - 2.0 * d * ua);
    bound_ = 1.01 * ((2.0 * u + u * u) + gamma * (1.0 + u) * (1.0 + u)) * std::sqrt(qn) * std::sqrt(cn) + 1e-30;
  }

  std::size_t panel_rows() const override { return kBlock; }
  std::size_t panel_stride() const override { return cols_pad_; }
  double error_bound() const override { return bound_; }

  void compute(std::size_t first, std::size_t count, float* out) override {
    (void)count;
    amx_block_panel(a_.data() + first * dim_pad_, dim_pad_ * sizeof(std::uint16_t), b_.data(), block_elems_,
                    dim_pad_ / 32, cols_pad_ / kBlock, out, cols_pad_ * sizeof(float));
  }

 private:
  std::size_t dim_pad_;
  std::size_t rows_pad_;
  std::size_t cols_pad_;
  std::size_t block_elems_ = 0;
  std::vector<std::uint16_t> a_;
  std::vector<std::uint16_t> b_;
  double bound_ = 0.0;
};

}  // namespace

bool amx_available() {
  static const bool ok = detect_amx();
  return ok;
}

namespace detail {
std::unique_ptr<SimilarityPanels> make_amx_panels(const Array2f& query, const Array2f& candidate) {
  if (!amx_available()) return nullptr;
  return std::make_unique<AmxPanels>(query, candidate);
}
}  // namespace detail

#else

bool amx_available() { return false; }

namespace detail {
std::unique_ptr<SimilarityPanels> make_amx_panels(const Array2f&, const Array2f&) { return nullptr; }
}  // namespace detail

#endif

}  // namespace vpr
