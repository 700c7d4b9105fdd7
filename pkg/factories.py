"""
Factories for the category taxonomy and provider handles.
Uses Factory Pattern.
"""

from dataclasses import dataclass
from typing import Dict

from models import CategoryChild, CategoryParent, RelevanceCategory


@dataclass(frozen=True)
class CategoryDefinition:
    """A taxonomy leaf together with its edit instruction."""
    category: RelevanceCategory
    description: str

    @property
    def path(self) -> str:
        return self.category.path


class CategoryFactory:
    """Factory for the 11-leaf semantic relevance taxonomy."""

    _DEFINITIONS = (
        (CategoryParent.ACTION, CategoryChild.ACTION_SEQUENCE,
         "Change the temporal ordering of actions."),
        (CategoryParent.ACTION, CategoryChild.FINE_GRAINED_ACTION,
         "Replace an action verb with a visually similar but directionally "
         "or temporally distinct one."),
        (CategoryParent.OBJECT, CategoryChild.OBJECT_EXISTENCE,
         "Add or remove an identifiable object."),
        (CategoryParent.OBJECT, CategoryChild.OBJECT_PART_RELATION,
         "Modify part–whole relations or accessory relations."),
        (CategoryParent.OBJECT, CategoryChild.OBJECT_SPATIAL_RELATION,
         "Change relative spatial positions of objects."),
        (CategoryParent.OBJECT, CategoryChild.OBJECT_MOVING,
         "Change the motion direction or trajectory of an object."),
        (CategoryParent.SCENE, CategoryChild.SCENE_EXISTENCE,
         "Replace the type of scene."),
        (CategoryParent.SCENE, CategoryChild.SCENE_TRANSITION,
         "Change scene order, transition direction, or timing."),
        (CategoryParent.ATTRIBUTE, CategoryChild.ATTRIBUTE_VALUE,
         "Change intrinsic properties such as color, size, material, shape, "
         "or state."),
        (CategoryParent.ATTRIBUTE, CategoryChild.COUNTING,
         "Change the number of objects or actions."),
        (CategoryParent.ATTRIBUTE, CategoryChild.COMPARISON,
         "Flip comparative relations such as size or speed."),
    )

    @staticmethod
    def create_all() -> Dict[str, CategoryDefinition]:
        """Create all taxonomy leaves keyed by canonical "Parent/Child" path."""
        registry = {}
        for parent, child, description in CategoryFactory._DEFINITIONS:
            definition = CategoryDefinition(RelevanceCategory(parent, child), description)
            registry[definition.path] = definition
        return registry


# Shared read-only taxonomy registry.
TAXONOMY: Dict[str, CategoryDefinition] = CategoryFactory.create_all()
