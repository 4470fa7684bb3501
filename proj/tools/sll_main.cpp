#include <iostream>

int main() {
    std::cout << "sll: command-line harness (under construction)\n";
    return 0;
}
