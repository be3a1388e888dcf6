#include "vhgnn/hypergraph.hpp"

namespace vhgnn {

Incidence incidence_from_members(std::size_t num_nodes,
                                 std::vector<std::vector<std::size_t>> members) {
    Incidence inc;
    inc.num_nodes = num_nodes;
    inc.num_edges = members.size();
    inc.mask.assign(num_nodes * inc.num_edges, 0);
    inc.edges_of.assign(num_nodes, {});
    for (std::size_t e = 0; e < members.size(); ++e) {
        for (std::size_t node : members[e]) {
            if (node >= num_nodes) {
                throw DimensionError("hyperedge " + std::to_string(e) + " references node " +
                                     std::to_string(node) + " beyond n=" +
                                     std::to_string(num_nodes));
            }
            inc.mask[node * inc.num_edges + e] = 1;
            inc.edges_of[node].push_back(e);
        }
    }
    inc.members = std::move(members);
    return inc;
}

VisualHypergraph add_virtual_hypernode(const VisualHypergraph& g) {
    if (g.has_virtual_node()) throw ConfigError("hypergraph already has a virtual hypernode");
    const Incidence& base = g.incidence();
    const std::size_t master = base.num_nodes;
    std::vector<std::vector<std::size_t>> members = base.members;
    for (auto& m : members) m.push_back(master); // master index is largest, stays sorted
    auto inc = std::make_shared<Incidence>(incidence_from_members(master + 1, std::move(members)));
    return VisualHypergraph(g.k(), true, std::move(inc));
}

} // namespace vhgnn
