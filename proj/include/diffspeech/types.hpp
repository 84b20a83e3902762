#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace diffspeech {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Frames are rows: an utterance of L frames with D feature dims is L x D.
template <typename Scalar>
using FeatureMatrix = Mat<Scalar>;

using Matd = Mat<double>;
using Vecd = Vec<double>;
using RowVecd = RowVec<double>;

// Error taxonomy. The CLI maps these onto exit codes:
// config/lookup/shape/io -> 2 (usage), domain/numeric -> 3 (numeric failure).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LookupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCheckpointFormat = "diffspeech-ckpt-v1";
inline constexpr const char* kDictionaryFormat = "diffspeech-dict-v1";
inline constexpr const char* kDurationTableFormat = "diffspeech-durtab-v1";
inline constexpr const char* kInventoryFormat = "diffspeech-inventory-v1";

template <typename A, typename B>
void require_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

}  // namespace diffspeech
