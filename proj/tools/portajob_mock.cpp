#include "portajob/mock_lrm.hpp"

int main(int argc, char** argv) {
    return portajob::mock::run_cli(argc, argv);
}
