#include <iostream>

int main() {
    std::cout << "mqsec: placeholder\n";
    return 0;
}
