#pragma once

#include "avatar_forge/core.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace avatar_forge {

enum class DType { float64, int32 };

// The AVF1 container: magic line, newline-terminated key=value header,
// a blank line, then raw little-endian arrays in header order.
//
//   AVF1
//   meta.kind=template_model
//   array.vertices=float64:482,3
//   ...
//   <blank line>
//   <binary payload>
class ArrayFile {
   public:
    struct Array {
        DType dtype = DType::float64;
        std::vector<std::int64_t> shape;
        std::vector<double> f64;
        std::vector<std::int32_t> i32;
        std::int64_t element_count() const;
    };

    void set_meta(const std::string& key, const std::string& value);
    std::optional<std::string> meta(const std::string& key) const;
    const std::string& require_meta(const std::string& key) const;

    template <class Derived>
    void set(const std::string& name, const Eigen::DenseBase<Derived>& m) {
        Array a;
        a.shape = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
        using Scalar = typename Derived::Scalar;
        const Index rows = m.rows(), cols = m.cols();
        if constexpr (std::is_floating_point_v<Scalar>) {
            a.dtype = DType::float64;
            a.f64.reserve(static_cast<size_t>(rows * cols));
            for (Index r = 0; r < rows; ++r)
                for (Index c = 0; c < cols; ++c) a.f64.push_back(static_cast<double>(m.derived()(r, c)));
        } else {
            a.dtype = DType::int32;
            a.i32.reserve(static_cast<size_t>(rows * cols));
            for (Index r = 0; r < rows; ++r)
                for (Index c = 0; c < cols; ++c)
                    a.i32.push_back(static_cast<std::int32_t>(m.derived()(r, c)));
        }
        put(name, std::move(a));
    }
    void set_ints(const std::string& name, const std::vector<std::int32_t>& values);

    bool has(const std::string& name) const;
    const Array& array(const std::string& name) const;

    // Typed accessors check dtype and shape; -1 in an expected dimension means
    // "any". Shape mismatches raise DimensionError.
    Matrix matrix(const std::string& name, Index rows = -1, Index cols = -1) const;
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> int_matrix(
        const std::string& name, Index rows = -1, Index cols = -1) const;
    std::vector<std::int32_t> ints(const std::string& name, Index count = -1) const;

    std::vector<std::string> names() const { return order_; }

    void write(const std::string& path) const;
    static ArrayFile read(const std::string& path);

    std::string serialize() const;
    static ArrayFile parse(const std::string& bytes);

   private:
    void put(const std::string& name, Array a);
    std::vector<std::string> order_;
    std::map<std::string, Array> arrays_;
    std::vector<std::pair<std::string, std::string>> meta_;
};

}  // namespace avatar_forge
