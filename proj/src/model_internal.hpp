#pragma once

#include <span>

#include "editlab/model.hpp"

namespace editlab::detail {

inline constexpr double kRmsEps = 1e-5;
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

void rms_norm(const MatrixD& x, std::span<const float> scale, MatrixD& y, Vec& inv_rms);
double gelu(double u);
double gelu_grad(double u);
void check_tokens(const ArchSpec& arch, std::span<const TokenId> tokens);

}  // namespace editlab::detail
