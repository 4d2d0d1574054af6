#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

namespace avatar_forge {

using Index = Eigen::Index;

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using Points3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <class Scalar>
using Points2 = Eigen::Matrix<Scalar, Eigen::Dynamic, 2, Eigen::RowMajor>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using PointCloud = Points3<double>;
using PointCloud2D = Points2<double>;
using Triangles = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Error hierarchy. Every engine failure derives from Error so the CLI can map
// categories onto exit codes.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

#define AVATAR_FORGE_ERROR(name)          \
    class name : public Error {           \
       public:                            \
        using Error::Error;               \
    };

AVATAR_FORGE_ERROR(ParseError)
AVATAR_FORGE_ERROR(InvariantError)
AVATAR_FORGE_ERROR(DimensionError)
AVATAR_FORGE_ERROR(IoError)
AVATAR_FORGE_ERROR(StaleTapeError)
AVATAR_FORGE_ERROR(DegenerateCameraError)
AVATAR_FORGE_ERROR(ProviderError)
AVATAR_FORGE_ERROR(NonFiniteError)
AVATAR_FORGE_ERROR(TopologyMismatchError)
AVATAR_FORGE_ERROR(ConfigError)

#undef AVATAR_FORGE_ERROR

// 64-bit FNV-1a style content fingerprint, used by tapes to detect inputs
// that were mutated between a forward and a backward call.
class Fingerprint {
   public:
    template <class Derived>
    Fingerprint& add(const Eigen::DenseBase<Derived>& m) {
        const auto& e = m.derived().eval();
        add_bytes(e.data(), sizeof(typename Derived::Scalar) * static_cast<size_t>(e.size()));
        add_value(static_cast<std::uint64_t>(e.rows()));
        add_value(static_cast<std::uint64_t>(e.cols()));
        return *this;
    }
    Fingerprint& add_bytes(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        size_t i = 0;
        for (; i + 8 <= n; i += 8) {
            std::uint64_t w;
            std::memcpy(&w, p + i, 8);
            mix(w);
        }
        std::uint64_t tail = 0;
        if (i < n) {
            std::memcpy(&tail, p + i, n - i);
            mix(tail ^ (static_cast<std::uint64_t>(n - i) << 56));
        }
        return *this;
    }
    Fingerprint& add_value(std::uint64_t v) {
        mix(v);
        return *this;
    }
    std::uint64_t value() const { return h_; }

   private:
    void mix(std::uint64_t w) {
        h_ ^= w + 0x9e3779b97f4a7c15ULL + (h_ << 6) + (h_ >> 2);
        h_ *= 0x100000001b3ULL;
    }
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

}  // namespace avatar_forge
