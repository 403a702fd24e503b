#pragma once

#include <string>

#include "bridgecond/image.hpp"

namespace bridgecond {

// One scored edit pair flowing through the pipeline, training and eval.
struct EditSample {
  std::string id;
  std::string task;  // removal | addition | replacement
  std::string mode;  // template | simple | advanced
  std::string instruction;
  RasterImage src;
  RasterImage tgt;
  Mask mask;  // closed edit-region mask

  bool scored = false;
  double sc_follow = 0, sc_overedit = 0, pq = 0;
  double sc = 0, overall = 0;
  bool accepted = false;

  std::string src_path, tgt_path, mask_path;
};

}  // namespace bridgecond
