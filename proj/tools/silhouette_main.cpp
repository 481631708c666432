#include "silhouette/asm.hpp"
int main(){return 0;}
