#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "flowchain/numcore.hpp"

int main(int argc, char** argv)
{
    flowchain::tune_allocator();
    doctest::Context context(argc, argv);
    return context.run();
}
