#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <torch/torch.h>

#include "focusnet/runtime.hpp"

int main(int argc, char** argv) {
    focusnet::tune_allocator();
    torch::set_num_threads(1);
    doctest::Context ctx(argc, argv);
    return ctx.run();
}
