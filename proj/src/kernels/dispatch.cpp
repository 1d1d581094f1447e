#include <atomic>
#include <cstdlib>
#include <string_view>

#include "anclaf/kernels.hpp"

namespace anclaf::kernels {
namespace {

const KernelTable* initial_table() {
    // ANCLAF_ISA=scalar forces the reference kernels.
    if (const char* env = std::getenv("ANCLAF_ISA"); env && std::string_view(env) == "scalar")
        return &scalar_table();
    if (const KernelTable* t = avx2_table()) return t;
    return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
    static std::atomic<const KernelTable*> current{initial_table()};
    return current;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

bool select(Isa isa) {
    const KernelTable* t = isa == Isa::avx2 ? avx2_table() : &scalar_table();
    if (!t) return false;
    slot().store(t, std::memory_order_release);
    return true;
}

}  // namespace anclaf::kernels
