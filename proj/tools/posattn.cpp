#include "posattn/cli.hpp"

int main(int argc, char** argv) {
    return posattn::dispatch(argc, argv);
}
