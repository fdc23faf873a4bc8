#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lcmflow {

// Sparse or dense set of 2-D flow measurements in the image basis.
// Sample i: vector (dx, dy) observed at pixel (x, y); valid flags samples
// whose solve succeeded / whose projection exists.
struct FlowField {
  std::vector<double> x, y;    // sample positions, pixels
  std::vector<double> dx, dy;  // flow vectors, pixels/frame
  std::vector<uint8_t> valid;

  size_t size() const { return x.size(); }
  void push(double px, double py, double vx, double vy, bool ok) {
    x.push_back(px);
    y.push_back(py);
    dx.push_back(vx);
    dy.push_back(vy);
    valid.push_back(ok ? 1 : 0);
  }
  void reserve(size_t n) {
    x.reserve(n);
    y.reserve(n);
    dx.reserve(n);
    dy.reserve(n);
    valid.reserve(n);
  }
};

// Binary serialization: magic "FLF1", u32 count, then per sample
// f32 x, f32 y, f32 dx, f32 dy, u8 valid. Little-endian throughout.
void save_flow_field(const FlowField& field, const std::string& path);
FlowField load_flow_field(const std::string& path);

}  // namespace lcmflow
