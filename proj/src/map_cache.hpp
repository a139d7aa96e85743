#pragma once

#include <winmix/tensor.hpp>

#include <memory>
#include <string>
#include <unordered_map>

namespace winmix::detail {

/// Per-thread memo of index maps keyed by a caller-built string. Maps are
/// pure functions of their key, so sharing them between forward passes only
/// saves rebuilding.
template <typename Build> IndexMapPtr cached_map(const std::string &key, Build &&build) {
  thread_local std::unordered_map<std::string, IndexMapPtr> cache;
  if (auto it = cache.find(key); it != cache.end())
    return it->second;
  if (cache.size() > 512)
    cache.clear();
  auto map = std::make_shared<const IndexMap>(build());
  cache.emplace(key, map);
  return map;
}

} // namespace winmix::detail
