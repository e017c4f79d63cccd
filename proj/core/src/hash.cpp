#include "vtonlab/hash.hpp"

#include <cstring>
#include <iomanip>
#include <sstream>

namespace vtonlab {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state) {
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

std::uint64_t fnv1a64(std::span<const double> values, std::uint64_t state) {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(values.data()), values.size_bytes()), state);
}

std::string hex64(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace vtonlab
