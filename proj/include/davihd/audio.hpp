#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "davihd/errors.hpp"
#include "davihd/tensor.hpp"

namespace davihd {

inline constexpr int kSampleRate = 16000;
inline constexpr double kLogMelFloor = 1e-10;

// 16 kHz mono waveform, samples in [-1, 1].
struct Waveform {
    std::vector<double> samples;
    int sample_rate = kSampleRate;

    std::size_t length() const { return samples.size(); }
    double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct SpectrogramParams {
    std::size_t n_fft = 2048;
    std::size_t hop = 256;
    std::size_t n_mels = 128;
    double f_min = 0.0;
    double f_max = 8000.0;
};

// F x T log-compressed mel energies plus provenance parameters.
struct LogMelSpectrogram {
    Tensor values;  // [n_mels, T]
    double frame_rate = 0.0;
    SpectrogramParams params;
};

// ---------------------------------------------------------------------------
// WAV I/O (RIFF/WAVE, 16-bit PCM only; no resampling)
// ---------------------------------------------------------------------------

namespace wav_detail {

inline std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 24) & 0xff);
}
inline void put_u16(std::vector<unsigned char>& v, std::uint16_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
}

}  // namespace wav_detail

// Decodes a 16-bit PCM RIFF/WAVE file. Multi-channel input is averaged to
// mono; samples are scaled by 1/32768. Sample rates other than 16 kHz are
// rejected rather than resampled.
inline Waveform load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_wav: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    using namespace wav_detail;
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw DataError("load_wav: not a RIFF/WAVE file: " + path);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    std::size_t off = 12;
    while (off + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + off);
        const std::uint32_t sz = read_u32(bytes.data() + off + 4);
        const std::size_t body = off + 8;
        if (body + sz > bytes.size()) throw DataError("load_wav: truncated chunk in " + path);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (sz < 16) throw DataError("load_wav: malformed fmt chunk in " + path);
            format = read_u16(bytes.data() + body);
            channels = read_u16(bytes.data() + body + 2);
            rate = read_u32(bytes.data() + body + 4);
            bits = read_u16(bytes.data() + body + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = bytes.data() + body;
            data_len = sz;
        }
        off = body + sz + (sz & 1);  // chunks are word-aligned
    }
    if (format != 1 || bits != 16)
        throw DataError("load_wav: unsupported codec (need 16-bit PCM): " + path);
    if (channels == 0 || data == nullptr) throw DataError("load_wav: missing fmt/data chunk: " + path);
    if (rate != kSampleRate)
        throw DataError("load_wav: unsupported sample rate " + std::to_string(rate) + " (need 16000): " +
                        path);

    const std::size_t frames = data_len / (2 * channels);
    Waveform w;
    w.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            const unsigned char* p = data + 2 * (i * channels + c);
            const std::int16_t s = static_cast<std::int16_t>(p[0] | (p[1] << 8));
            acc += static_cast<double>(s);
        }
        w.samples[i] = acc / (channels * 32768.0);
    }
    return w;
}

// Writes mono 16-bit PCM at 16 kHz; samples are clamped to [-1, 1] and
// quantized by round(x * 32767).
inline void write_wav(const std::string& path, const Waveform& w) {
    using namespace wav_detail;
    std::vector<unsigned char> out;
    out.reserve(44 + w.samples.size() * 2);
    const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_len);
    out.insert(out.end(), {'W', 'A', 'V', 'E'});
    out.insert(out.end(), {'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, kSampleRate);
    put_u32(out, kSampleRate * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_len);
    for (double x : w.samples) {
        const double c = std::clamp(x, -1.0, 1.0);
        const auto s = static_cast<std::int16_t>(std::lround(c * 32767.0));
        put_u16(out, static_cast<std::uint16_t>(s));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("write_wav: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("write_wav: write failed: " + path);
}

// ---------------------------------------------------------------------------
// FFT / STFT
// ---------------------------------------------------------------------------

// In-place iterative radix-2 FFT; n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw ShapeError("fft: size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Power spectrogram [n_fft/2 + 1, T] from Hann-windowed frames with no
// centering: frame t covers samples [t*hop, t*hop + n_fft), so
// T = 1 + floor((L - n_fft)/hop).
inline Tensor stft_power(const Waveform& w, std::size_t n_fft = 2048, std::size_t hop = 256) {
    const std::size_t L = w.samples.size();
    if (n_fft == 0 || (n_fft & (n_fft - 1)) != 0) throw ShapeError("stft_power: n_fft must be a power of two");
    if (hop == 0) throw ShapeError("stft_power: hop must be >= 1");
    if (L < n_fft) throw DataError("stft_power: waveform shorter than one frame");
    const std::size_t T = 1 + (L - n_fft) / hop;
    const std::size_t bins = n_fft / 2 + 1;
    std::vector<double> window(n_fft);
    for (std::size_t i = 0; i < n_fft; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n_fft));
    Tensor out({bins, T});
    auto& ov = out.values();
    std::vector<std::complex<double>> frame(n_fft);
    for (std::size_t t = 0; t < T; ++t) {
        const double* src = w.samples.data() + t * hop;
        for (std::size_t i = 0; i < n_fft; ++i) frame[i] = {src[i] * window[i], 0.0};
        fft_radix2(frame);
        for (std::size_t b = 0; b < bins; ++b) ov[b * T + t] = std::norm(frame[b]);
    }
    detail::check_finite(out, "stft_power");
    return out;
}

// ---------------------------------------------------------------------------
// mel filterbank / log-mel
// ---------------------------------------------------------------------------

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filters on the HTK mel scale, peak-normalized so every row has
// maximum exactly 1. Returns [n_mels, n_fft/2 + 1].
inline Tensor mel_filterbank(std::size_t n_mels = 128, std::size_t n_fft = 2048,
                             double sample_rate = 16000.0, double f_min = 0.0,
                             double f_max = 8000.0) {
    if (n_mels == 0) throw ShapeError("mel_filterbank: n_mels must be >= 1");
    if (!(f_min >= 0.0) || !(f_max > f_min) || f_max > sample_rate / 2.0)
        throw ShapeError("mel_filterbank: invalid frequency range");
    const std::size_t bins = n_fft / 2 + 1;
    std::vector<double> centers(n_mels + 2);
    const double m_lo = hz_to_mel(f_min), m_hi = hz_to_mel(f_max);
    for (std::size_t i = 0; i < n_mels + 2; ++i)
        centers[i] = mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) /
                                          static_cast<double>(n_mels + 1));
    Tensor fb({n_mels, bins});
    auto& fv = fb.values();
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double left = centers[m], mid = centers[m + 1], right = centers[m + 2];
        double row_max = 0.0;
        for (std::size_t b = 0; b < bins; ++b) {
            const double f = static_cast<double>(b) * sample_rate / static_cast<double>(n_fft);
            double wgt = 0.0;
            if (f > left && f < right)
                wgt = f <= mid ? (f - left) / (mid - left) : (right - f) / (right - mid);
            fv[m * bins + b] = wgt;
            row_max = std::max(row_max, wgt);
        }
        if (row_max <= 0.0)
            throw ShapeError("mel_filterbank: empty filter row " + std::to_string(m) +
                             " (too many mel bins for this FFT size)");
        for (std::size_t b = 0; b < bins; ++b) fv[m * bins + b] /= row_max;
    }
    return fb;
}

// S = ln(max(filterbank x power, 1e-10)).
inline Tensor log_mel(const Tensor& power, const Tensor& filterbank) {
    if (power.ndim() != 2 || filterbank.ndim() != 2 || filterbank.dim(1) != power.dim(0))
        throw ShapeError("log_mel: filterbank " + shape_str(filterbank.shape()) +
                         " does not apply to power " + shape_str(power.shape()));
    Tensor mel = matmul(filterbank, power);
    auto& mv = mel.values();
    for (double& v : mv) v = std::log(std::max(v, kLogMelFloor));
    detail::check_finite(mel, "log_mel");
    return mel;
}

// |S_t - S_{t-1}| with a zero first column. Front-end alias of frame_diff();
// differentiable when called under a tape.
inline Tensor frame_difference(const Tensor& s) {
    if (s.ndim() != 2) throw ShapeError("frame_difference: expected [F,T]");
    return frame_diff(s);
}

// Full waveform -> log-mel pipeline.
inline LogMelSpectrogram make_log_mel(const Waveform& w, const SpectrogramParams& p) {
    Tensor power = stft_power(w, p.n_fft, p.hop);
    Tensor fb = mel_filterbank(p.n_mels, p.n_fft, static_cast<double>(w.sample_rate), p.f_min, p.f_max);
    LogMelSpectrogram s;
    s.values = log_mel(power, fb);
    s.frame_rate = static_cast<double>(w.sample_rate) / static_cast<double>(p.hop);
    s.params = p;
    return s;
}

}  // namespace davihd
