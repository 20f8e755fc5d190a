#include "ofnet/kern.hpp"

#include <string>

namespace ofnet::kern {
namespace {
const Ops* forced = nullptr;
}

const Ops& active() {
    if (forced) return *forced;
    return avx2_available() ? avx2() : scalar();
}

bool force(const char* name) {
    std::string s = name ? name : "";
    if (s.empty()) { forced = nullptr; return true; }
    if (s == "scalar") { forced = &scalar(); return true; }
    if (s == "avx2" && avx2_available()) { forced = &avx2(); return true; }
    return false;
}

}  // namespace ofnet::kern
