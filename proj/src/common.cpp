#include "dynamite/common.hpp"

#include <charconv>

namespace dynamite {

Seed derive_seed(Seed parent, std::string_view tag) {
    // FNV-1a over the tag, then mixed with the parent.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return derive_seed(parent, h);
}

bool Bounds::contains(const RowVector& x, double tol) const {
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        if (x(j) < lo(j) - tol || x(j) > hi(j) + tol) return false;
    }
    return true;
}

void Bounds::clip(Eigen::Ref<RowVector> x) const {
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        x(j) = std::min(std::max(x(j), lo(j)), hi(j));
    }
}

void Bounds::clip_rows(Matrix& x) const {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            x(i, j) = std::min(std::max(x(i, j), lo(j)), hi(j));
        }
    }
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc{}) throw Error("format_double: conversion failed");
    return {buf, ptr};
}

}  // namespace dynamite
